use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adapter::{attach_adapters, LoraAdapter, LoraConfig};
use super::model::{AdaptedModel, LoraGrads, LoraWeights, ToyModel};
use super::vocab::{WordTokenizer, EOS};
use super::LoraError;
use crate::data::TrainingPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    /// Examples per optimizer step.
    pub batch_size: usize,
    /// Examples per gradient accumulation chunk.
    pub micro_batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 5e-4,
            warmup_fraction: 0.05,
            weight_decay: 1e-4,
            batch_size: 16,
            micro_batch: 4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LoraError> {
        let ok = self.epochs > 0
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.warmup_fraction)
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.micro_batch > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(LoraError::Config(format!(
                "invalid training config {self:?}"
            )))
        }
    }

    pub fn digest(&self) -> u64 {
        crate::text::fnv1a64(format!("{self:?}").as_bytes())
    }
}

/// Linear warmup to the peak rate, then linear decay towards zero.
pub fn learning_rate_at(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    let warmup = (cfg.warmup_fraction * total_steps as f64).ceil() as usize;
    if step < warmup {
        cfg.learning_rate * (step + 1) as f64 / warmup as f64
    } else {
        let rest = (total_steps - warmup).max(1) as f64;
        cfg.learning_rate * ((total_steps - step) as f64 / rest).max(0.0)
    }
}

/// Source ids: the input's words, then EOS, within `max_len`.
pub fn encode_source(tokenizer: &WordTokenizer, text: &str, max_len: usize) -> Vec<u32> {
    let mut ids = tokenizer.encode(text);
    ids.truncate(max_len.saturating_sub(1));
    ids.push(EOS);
    ids
}

/// Target ids: the output's words, then EOS, within `max_len`.
pub fn encode_target(tokenizer: &WordTokenizer, text: &str, max_len: usize) -> Vec<u32> {
    encode_source(tokenizer, text, max_len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-example loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub optimizer_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedAdapter {
    pub adapter: LoraAdapter,
    pub report: TrainReport,
}

struct Adam {
    m: LoraGrads,
    v: LoraGrads,
    t: i32,
}

impl Adam {
    fn step(&mut self, w: &mut LoraWeights, g: &LoraGrads, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (site, p) in w.sites.iter_mut() {
            let (m, v, g) = (
                self.m.get_mut(site).unwrap(),
                self.v.get_mut(site).unwrap(),
                &g[site],
            );
            update(&mut p.a, &mut m.a, &mut v.a, &g.a, lr, c1, c2, cfg);
            update(&mut p.b, &mut m.b, &mut v.b, &g.b, lr, c1, c2, cfg);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    p: &mut Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    g: &Array2<f64>,
    lr: f64,
    c1: f64,
    c2: f64,
    cfg: &TrainConfig,
) {
    ndarray::Zip::from(p)
        .and(m)
        .and(v)
        .and(g)
        .for_each(|p, m, v, &g| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let step = (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            *p -= lr * (step + cfg.weight_decay * *p);
        });
}

/// Trains a fresh adapter on one user's pairs. Base weights are only
/// read; the result is a pure function of the inputs and `train.seed`.
pub fn train_user_adapter(
    base: &ToyModel,
    pairs: &[TrainingPair],
    lora: &LoraConfig,
    train: &TrainConfig,
    tokenizer: &WordTokenizer,
) -> Result<TrainedAdapter, LoraError> {
    if pairs.is_empty() {
        return Err(LoraError::EmptyTrainingSet);
    }
    train.validate()?;
    let fresh = attach_adapters(base, lora, train.seed)?;
    let (max_in, max_out) = (base.config().max_input_len, base.config().max_output_len);
    let examples: Vec<(Vec<u32>, Vec<u32>)> = pairs
        .iter()
        .map(|p| {
            (
                encode_source(tokenizer, &p.input, max_in),
                encode_target(tokenizer, &p.target, max_out),
            )
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5eed_da7a);
    let mut model =
        AdaptedModel::from_weights(base, LoraWeights::from_adapter(&fresh, lora.dropout));
    let zeros = model.weights().unwrap().zeros_like();
    let mut adam = Adam {
        m: zeros.clone(),
        v: zeros.clone(),
        t: 0,
    };

    let batch = train.batch_size.min(examples.len());
    let steps_per_epoch = examples.len().div_ceil(batch);
    let total_steps = train.epochs * steps_per_epoch;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(train.epochs);
    let mut step = 0;
    for epoch in 1..=train.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch_ids in order.chunks(batch) {
            let mut acc = zeros.clone();
            for micro in batch_ids.chunks(train.micro_batch) {
                for &i in micro {
                    let (src, tgt) = &examples[i];
                    let (loss, g) = model.loss_and_grads(src, tgt, Some(&mut rng));
                    if !loss.is_finite() {
                        return Err(LoraError::Divergence {
                            epoch,
                            step: step + 1,
                        });
                    }
                    epoch_loss += loss;
                    for (site, gp) in g {
                        let a = acc.get_mut(&site).unwrap();
                        a.a += &gp.a;
                        a.b += &gp.b;
                    }
                }
            }
            let inv = 1.0 / batch_ids.len() as f64;
            for p in acc.values_mut() {
                p.a *= inv;
                p.b *= inv;
            }
            let lr = learning_rate_at(train, step, total_steps);
            adam.step(model.weights_mut().unwrap(), &acc, lr, train);
            step += 1;
            let diverged = model
                .weights()
                .unwrap()
                .sites
                .values()
                .any(|p| !p.a.iter().chain(p.b.iter()).all(|x| x.is_finite()));
            if diverged {
                return Err(LoraError::Divergence { epoch, step });
            }
        }
        epoch_losses.push(epoch_loss / examples.len() as f64);
    }
    let adapter = model.weights().unwrap().to_adapter(*base.fingerprint());
    Ok(TrainedAdapter {
        adapter,
        report: TrainReport {
            epoch_losses,
            optimizer_steps: step,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::model::ToyModelConfig;

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = TrainConfig::default();
        assert!((learning_rate_at(&cfg, 0, 100) - 1e-4).abs() < 1e-15);
        assert!((learning_rate_at(&cfg, 4, 100) - 5e-4).abs() < 1e-15);
        assert!((learning_rate_at(&cfg, 5, 100) - 5e-4).abs() < 1e-15);
        assert!(learning_rate_at(&cfg, 99, 100) < 1e-5);
    }

    #[test]
    fn empty_pairs_rejected() {
        let base = ToyModel::random(ToyModelConfig::sized(16, 8, 2, 1), 0).unwrap();
        let tok = WordTokenizer::new(16);
        let err = train_user_adapter(
            &base,
            &[],
            &LoraConfig::default(),
            &TrainConfig::default(),
            &tok,
        );
        assert!(matches!(err, Err(LoraError::EmptyTrainingSet)));
    }

    #[test]
    fn huge_learning_rate_diverges_with_location() {
        let base = ToyModel::random(ToyModelConfig::sized(16, 8, 2, 1), 0).unwrap();
        let pairs = vec![TrainingPair {
            input: "a b".into(),
            target: "c".into(),
            source_entry_id: "e".into(),
        }];
        let tok = WordTokenizer::build(16, ["a b c"]);
        let train = TrainConfig {
            learning_rate: 1e300,
            epochs: 5,
            warmup_fraction: 0.0,
            ..TrainConfig::default()
        };
        match train_user_adapter(&base, &pairs, &LoraConfig::default(), &train, &tok) {
            Err(LoraError::Divergence { epoch, step }) => assert!(epoch >= 1 && step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
