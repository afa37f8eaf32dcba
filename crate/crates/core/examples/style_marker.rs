//! Trains a per-user adapter on a user whose headlines always end with the
//! same marker word, then compares base and adapted generations.

use std::sync::Arc;
use std::time::Instant;

use anyhow::Result;
use persona::data::{build_user_training_set, TaskId};
use persona::gateway::{generate, DecodeConfig, ModelHandle};
use persona::lora::{
    train_user_adapter, LoraConfig, ToyModel, ToyModelConfig, TrainConfig, WordTokenizer,
};
use persona::synthetic::{headline_inputs, style_marker_user};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let entries: usize = args.get(1).map_or(Ok(256), |s| s.parse())?;
    let lr: f64 = args.get(2).map_or(Ok(5e-4), |s| s.parse())?;
    let marker = "zorblax";
    let user = style_marker_user("marker-user", entries, 8, marker, 7);
    let base = Arc::new(ToyModel::random(ToyModelConfig::default(), 11)?);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs = build_user_training_set(TaskId::Lamp4, &user.profile, &mut rng)?.pairs;
    let tokenizer = WordTokenizer::build(
        base.config().vocab_size,
        pairs
            .iter()
            .flat_map(|p| [p.input.as_str(), p.target.as_str()]),
    );

    let t = Instant::now();
    let train = TrainConfig {
        learning_rate: lr,
        ..TrainConfig::default()
    };
    let trained = train_user_adapter(&base, &pairs, &LoraConfig::default(), &train, &tokenizer)?;
    let losses = &trained.report.epoch_losses;
    println!(
        "trained {} epochs, {} steps in {:.1}s: loss {:.4} -> {:.4} ({:.1}%)",
        losses.len(),
        trained.report.optimizer_steps,
        t.elapsed().as_secs_f64(),
        losses[0],
        losses[losses.len() - 1],
        100.0 * losses[losses.len() - 1] / losses[0]
    );

    let decode = DecodeConfig {
        deterministic: true,
        max_output_tokens: 8,
        ..DecodeConfig::default()
    };
    let adapter = Arc::new(trained.adapter);
    let held_out = headline_inputs(20, 8, 99);
    let mut hits = [0usize; 2];
    for input in &held_out {
        for (slot, a) in [None, Some(adapter.clone())].into_iter().enumerate() {
            let handle = ModelHandle::toy(base.clone(), a, tokenizer.clone())?;
            let out = generate(&handle, input, &decode)?;
            if out.text.split_whitespace().last() == Some(marker) {
                hits[slot] += 1;
            }
            if slot == 1 && hits[1] <= 2 {
                println!("adapted: {}", out.text);
            }
        }
    }
    println!("suffix match: base {}/20, adapted {}/20", hits[0], hits[1]);
    Ok(())
}
