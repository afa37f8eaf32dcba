use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BackendConfig, Mode, RunConfig};
use super::privacy::{PrivacyAudit, PrivacySummary, UserScope};
use super::report::Comparison;
use super::ExperimentError;
use crate::data::{
    build_user_training_set, load_dataset, load_gold_outputs, Dataset, ProfileEntry, TaskId,
    TrainingPair, UserRecord,
};
use crate::gateway::{generate, ModelHandle, RemoteBackend};
use crate::lora::{
    train_user_adapter, LoraAdapter, LoraConfig, Site, ToyModel, TrainConfig, WordTokenizer,
};
use crate::metrics::{evaluate_task, per_user_value, MetricName, MetricValue};
use crate::prompting::{aggregate_prompt, make_query};
use crate::retrieval::{
    build_index, retrieve_bm25, retrieve_embedding, retrieve_recency, select_retriever,
    HashEmbedder, RetrieverKind,
};
use crate::store::{AdapterStore, StoreError};
use crate::text::{fnv1a64, WhitespaceCounter};

/// Dimension of the local hashed embedding used by the embedding retriever.
pub const EMBEDDING_DIM: usize = 256;

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Latency {
    pub retrieval: f64,
    pub adapter_load: f64,
    pub training: f64,
    pub generation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterSource {
    Trained,
    Store,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerUserResult {
    pub user_id: String,
    pub profile_size: usize,
    pub mode: Mode,
    pub prediction: String,
    pub gold: String,
    pub metrics: BTreeMap<MetricName, f64>,
    pub retriever: Option<RetrieverKind>,
    /// Ids of the profile entries that made it into the prompt.
    pub retrieved: Vec<String>,
    pub prompt_tokens: usize,
    pub adapter: Option<AdapterSource>,
    /// First and last epoch losses when an adapter was trained.
    pub training_loss: Option<(f64, f64)>,
    pub latency: Latency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserError {
    pub user_id: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskId,
    pub mode: Mode,
    pub config: RunConfig,
    pub aggregates: Vec<MetricValue>,
    pub users: Vec<PerUserResult>,
    pub errors: Vec<UserError>,
    pub privacy: PrivacySummary,
    pub comparison: Option<Comparison>,
}

impl EvalReport {
    /// Aggregates recomputed from the per-user rows.
    pub fn recompute_aggregates(&self) -> Result<Vec<MetricValue>, ExperimentError> {
        let preds: Vec<&str> = self.users.iter().map(|u| u.prediction.as_str()).collect();
        let golds: Vec<&str> = self.users.iter().map(|u| u.gold.as_str()).collect();
        evaluate_task(self.task, &preds, &golds).map_err(|e| {
            ExperimentError::Data(crate::data::DataError::Schema {
                record: "report".into(),
                message: e.to_string(),
            })
        })
    }

    pub fn aggregate(&self, metric: MetricName) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|m| m.name == metric)
            .map(|m| m.value)
    }

    pub fn user(&self, user_id: &str) -> Option<&PerUserResult> {
        self.users.iter().find(|u| u.user_id == user_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Loads the dataset and golds named in `cfg.paths` and runs it.
pub fn run_task(cfg: &RunConfig) -> Result<EvalReport, ExperimentError> {
    cfg.validate()?;
    let data = cfg
        .paths
        .data
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("no dataset path".into()))?;
    let golds = cfg
        .paths
        .golds
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("no golds path".into()))?;
    let mut dataset = load_dataset(data, cfg.task)?;
    dataset.join_golds(&load_gold_outputs(golds)?)?;
    let store = cfg
        .paths
        .store
        .as_ref()
        .map(AdapterStore::open)
        .transpose()?;
    run_dataset(cfg, &dataset, store.as_ref())
}

struct Shared<'a> {
    cfg: &'a RunConfig,
    handle: Option<ModelHandle>,
    toy: Option<Arc<ToyModel>>,
    store: Option<&'a AdapterStore>,
    audit: PrivacyAudit,
}

fn user_err(user: &str, stage: &str, e: impl std::fmt::Display) -> UserError {
    UserError {
        user_id: user.to_string(),
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

/// Per-user seed: order-independent and distinct across users.
pub fn user_seed(seed: u64, user_id: &str) -> u64 {
    seed ^ fnv1a64(user_id.as_bytes())
}

/// Runs one mode over an in-memory dataset whose golds are joined.
pub fn run_dataset(
    cfg: &RunConfig,
    dataset: &Dataset,
    store: Option<&AdapterStore>,
) -> Result<EvalReport, ExperimentError> {
    cfg.validate()?;
    if dataset.task != cfg.task {
        return Err(ExperimentError::Config(format!(
            "dataset is {} but the run is configured for {}",
            dataset.task, cfg.task
        )));
    }
    if let Some(r) = dataset.records.iter().find(|r| r.gold.is_empty()) {
        return Err(ExperimentError::Data(crate::data::DataError::Join {
            orphans: vec![],
            missing: vec![r.user_id.clone()],
        }));
    }
    let (handle, toy) = match &cfg.backend {
        BackendConfig::Mock { script } => (Some(ModelHandle::mock(script.clone())), None),
        BackendConfig::Remote { model, endpoint } => {
            let remote = match endpoint {
                Some(url) => RemoteBackend::new(url.clone(), model.clone()),
                None => RemoteBackend::from_env(model.clone())
                    .map_err(|e| ExperimentError::Config(e.to_string()))?,
            };
            (Some(ModelHandle::remote(remote)), None)
        }
        BackendConfig::Toy { model, seed } => {
            let base = ToyModel::random(model.clone(), *seed)
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            (None, Some(Arc::new(base)))
        }
    };
    let shared = Shared {
        cfg,
        handle,
        toy,
        store,
        audit: PrivacyAudit::new(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let outcomes: Vec<Result<PerUserResult, UserError>> = pool.install(|| {
        dataset
            .records
            .par_iter()
            .map(|r| process_user(&shared, r))
            .collect()
    });

    let total = outcomes.len();
    let mut users = Vec::with_capacity(total);
    let mut errors = Vec::new();
    for o in outcomes {
        match o {
            Ok(u) => users.push(u),
            Err(e) => errors.push(e),
        }
    }
    if errors.len() as f64 > cfg.max_error_fraction * total as f64 || users.is_empty() {
        let first = errors
            .first()
            .map(|e| format!("{} ({}): {}", e.user_id, e.stage, e.message))
            .unwrap_or_default();
        return Err(ExperimentError::TooManyFailures {
            failed: errors.len(),
            total,
            first,
        });
    }
    if cfg.decode.deterministic {
        for u in &mut users {
            u.latency = Latency::default();
        }
    }
    let mut report = EvalReport {
        task: cfg.task,
        mode: cfg.mode,
        config: cfg.clone(),
        aggregates: Vec::new(),
        users,
        errors,
        privacy: shared.audit.summary(),
        comparison: None,
    };
    report.aggregates = report.recompute_aggregates()?;
    Ok(report)
}

struct Prompt {
    text: String,
    tokens: usize,
    retriever: Option<RetrieverKind>,
    retrieved: Vec<String>,
}

fn rag_prompt(cfg: &RunConfig, scope: UserScope, record: &UserRecord) -> Result<Prompt, UserError> {
    let uid = &record.user_id;
    let task = cfg.task;
    let budget = cfg.decode.max_input_tokens;
    let profile = scope.profile(record);
    let entries: Vec<&ProfileEntry>;
    let mut retriever = None;
    if profile.is_empty() {
        entries = Vec::new();
    } else {
        let query = make_query(task, &record.input).map_err(|e| user_err(uid, "query", e))?;
        let kind = match cfg.retriever {
            RetrieverKind::Selected => select_retriever(
                cfg.selection,
                record,
                &[RetrieverKind::Bm25, RetrieverKind::Recency],
                None,
            )
            .map_err(|e| user_err(uid, "selection", e))?,
            k => k,
        };
        let k = cfg.k.min(profile.len());
        let hits = match kind {
            RetrieverKind::Bm25 => build_index(scope.index_of(record), task)
                .and_then(|idx| retrieve_bm25(&idx, &query, k)),
            RetrieverKind::Recency => retrieve_recency(profile, k),
            RetrieverKind::Embedding => retrieve_embedding(
                &HashEmbedder::new(EMBEDDING_DIM),
                scope.index_of(record),
                task,
                &query,
                k,
            ),
            RetrieverKind::Selected => unreachable!("selection resolved above"),
        }
        .map_err(|e| user_err(uid, "retrieval", e))?;
        retriever = Some(kind);
        entries = hits.indices().into_iter().map(|i| &profile[i]).collect();
    }
    let p = aggregate_prompt(task, &record.input, &entries, budget, &WhitespaceCounter)
        .map_err(|e| user_err(uid, "prompt", e))?;
    let retrieved = p
        .entries_used
        .iter()
        .map(|&i| entries[i].id.clone())
        .collect();
    Ok(Prompt {
        text: p.text,
        tokens: p.token_count,
        retriever,
        retrieved,
    })
}

fn expected_sites(base: &ToyModel, lora: &LoraConfig) -> BTreeSet<Site> {
    base.sites()
        .into_iter()
        .filter(|s| lora.targets.contains(&s.projection) && lora.blocks.contains(&s.block))
        .collect()
}

/// Whether a stored adapter was produced with the run's adapter shape.
fn adapter_matches(adapter: &LoraAdapter, base: &ToyModel, lora: &LoraConfig) -> bool {
    adapter.rank == lora.rank
        && adapter.alpha == lora.alpha as f32
        && adapter
            .matrices
            .iter()
            .map(|m| m.site)
            .collect::<BTreeSet<_>>()
            == expected_sites(base, lora)
}

struct Personalized {
    adapter: Arc<LoraAdapter>,
    source: AdapterSource,
    losses: Option<(f64, f64)>,
}

fn obtain_adapter(
    shared: &Shared,
    scope: UserScope,
    base: &ToyModel,
    pairs: &[TrainingPair],
    tokenizer: &WordTokenizer,
    latency: &mut Latency,
) -> Result<Personalized, UserError> {
    let cfg = shared.cfg;
    let uid = scope.user();
    if let Some(store) = shared.store {
        let key = scope.adapter_key(uid);
        if store.contains(key) {
            let t = Instant::now();
            let loaded = store.load_adapter(key, base.fingerprint());
            latency.adapter_load = t.elapsed().as_secs_f64();
            match loaded {
                Ok(a) if adapter_matches(&a, base, &cfg.lora) => {
                    return Ok(Personalized {
                        adapter: a,
                        source: AdapterSource::Store,
                        losses: None,
                    });
                }
                Ok(_) | Err(StoreError::WrongBaseModel(_)) => {}
                Err(e) => return Err(user_err(uid, "adapter_load", e)),
            }
        }
    }
    let train = TrainConfig {
        seed: user_seed(cfg.seed, uid),
        ..cfg.train.clone()
    };
    let t = Instant::now();
    let trained = train_user_adapter(base, pairs, &cfg.lora, &train, tokenizer)
        .map_err(|e| user_err(uid, "training", e))?;
    latency.training = t.elapsed().as_secs_f64();
    if let Some(store) = shared.store {
        store
            .save_adapter(scope.adapter_key(uid), &trained.adapter, true)
            .map_err(|e| user_err(uid, "adapter_save", e))?;
    }
    let losses = trained
        .report
        .epoch_losses
        .first()
        .zip(trained.report.epoch_losses.last())
        .map(|(a, b)| (*a, *b));
    Ok(Personalized {
        adapter: Arc::new(trained.adapter),
        source: AdapterSource::Trained,
        losses,
    })
}

fn process_user(shared: &Shared, record: &UserRecord) -> Result<PerUserResult, UserError> {
    let cfg = shared.cfg;
    let uid = &record.user_id;
    let scope = shared.audit.scope(uid);
    let mut latency = Latency::default();

    let t = Instant::now();
    let prompt = if cfg.mode.uses_retrieval() {
        rag_prompt(cfg, scope, record)?
    } else {
        Prompt {
            text: record.input.clone(),
            tokens: 0,
            retriever: None,
            retrieved: Vec::new(),
        }
    };
    latency.retrieval = if cfg.mode.uses_retrieval() {
        t.elapsed().as_secs_f64()
    } else {
        0.0
    };

    let mut adapter_source = None;
    let mut training_loss = None;
    let handle = match &shared.toy {
        Some(base) => {
            let mut rng = ChaCha8Rng::seed_from_u64(user_seed(cfg.seed, uid));
            let pairs =
                match build_user_training_set(cfg.task, scope.training_data(record), &mut rng) {
                    Ok(set) => set.pairs,
                    Err(e) if cfg.mode.uses_adapter() => return Err(user_err(uid, "convert", e)),
                    Err(_) => Vec::new(),
                };
            let tokenizer = WordTokenizer::build(
                base.config().vocab_size,
                pairs
                    .iter()
                    .flat_map(|p| [p.input.as_str(), p.target.as_str()]),
            );
            let adapter = if cfg.mode.uses_adapter() {
                let p = obtain_adapter(shared, scope, base, &pairs, &tokenizer, &mut latency)?;
                adapter_source = Some(p.source);
                training_loss = p.losses;
                Some(p.adapter)
            } else {
                None
            };
            ModelHandle::toy(base.clone(), adapter, tokenizer)
                .map_err(|e| user_err(uid, "backend", e))?
        }
        None => shared
            .handle
            .clone()
            .expect("non-toy backends share one handle"),
    };

    let generated =
        generate(&handle, &prompt.text, &cfg.decode).map_err(|e| user_err(uid, "generation", e))?;
    latency.generation = generated.latency;

    let metrics = MetricName::for_task(cfg.task)
        .iter()
        .map(|&m| per_user_value(cfg.task, m, &generated.text, &record.gold).map(|v| (m, v)))
        .collect::<Result<BTreeMap<_, _>, _>>()
        .map_err(|e| user_err(uid, "metrics", e))?;
    let prompt_tokens = if prompt.tokens > 0 {
        prompt.tokens
    } else {
        record.input.split_whitespace().count()
    };
    Ok(PerUserResult {
        user_id: uid.clone(),
        profile_size: record.profile.len(),
        mode: cfg.mode,
        prediction: generated.text,
        gold: record.gold.clone(),
        metrics,
        retriever: prompt.retriever,
        retrieved: prompt.retrieved,
        prompt_tokens,
        adapter: adapter_source,
        training_loss,
        latency,
    })
}
