//! One generation contract over three model backends: a scripted mock,
//! a remote inference endpoint, and the local toy model with an optional
//! per-user adapter.

pub mod beam;
pub mod http;
mod mock;
mod remote;

use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use beam::{beam_search, greedy, BeamConfig, Hypothesis, StepScorer};
pub use mock::{MockScript, DEFAULT_KEY};
pub use remote::{RemoteBackend, ENDPOINT_ENV};

use crate::lora::{
    encode_source, AdaptedModel, LoraAdapter, LoraError, ToyModel, WordTokenizer, BOS, EOS, PAD,
    UNK,
};
use crate::text::{TokenCounter, WhitespaceCounter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_input_tokens: usize,
    pub max_output_tokens: usize,
    /// Report latencies as zero so repeated runs serialize identically.
    pub deterministic: bool,
    /// Exponent of the length normalization in beam scoring.
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 4,
            max_input_tokens: 512,
            max_output_tokens: 128,
            deterministic: false,
            length_penalty: 1.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.beam == 0 || self.max_input_tokens == 0 || self.max_output_tokens == 0 {
            return Err(GatewayError::Config(
                "beam width and length limits must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendTag {
    Mock,
    Remote,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub token_count: usize,
    pub backend: BackendTag,
    /// Wall time in seconds.
    pub latency: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("adapter does not belong to the serving base model")]
    WrongBaseModel,
    #[error("gateway configuration: {0}")]
    Config(String),
}

impl From<LoraError> for GatewayError {
    fn from(e: LoraError) -> Self {
        match e {
            LoraError::WrongBaseModel => GatewayError::WrongBaseModel,
            other => GatewayError::Config(other.to_string()),
        }
    }
}

/// Local toy model, optionally personalized by an adapter.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    pub base: Arc<ToyModel>,
    pub adapter: Option<Arc<LoraAdapter>>,
    pub tokenizer: WordTokenizer,
}

#[derive(Debug, Clone)]
pub enum Backend {
    Mock(MockScript),
    Remote(RemoteBackend),
    Toy(ToyBackend),
}

/// A shareable, read-only model handle.
#[derive(Debug, Clone)]
pub struct ModelHandle {
    backend: Backend,
    fingerprint: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelHandle {
    pub fn mock(script: MockScript) -> ModelHandle {
        let digest = Sha256::digest(serde_json::to_vec(&script).expect("script serializes"));
        ModelHandle {
            fingerprint: format!("mock:{}", hex(&digest[..8])),
            backend: Backend::Mock(script),
        }
    }

    pub fn remote(remote: RemoteBackend) -> ModelHandle {
        ModelHandle {
            fingerprint: format!("remote:{}@{}", remote.model, remote.endpoint),
            backend: Backend::Remote(remote),
        }
    }

    /// Fails when the adapter was trained against another base model.
    pub fn toy(
        base: Arc<ToyModel>,
        adapter: Option<Arc<LoraAdapter>>,
        tokenizer: WordTokenizer,
    ) -> Result<ModelHandle, GatewayError> {
        if let Some(a) = &adapter {
            a.check_base(&base)?;
        }
        let fingerprint = format!("toy:{}", hex(&base.fingerprint()[..8]));
        Ok(ModelHandle {
            backend: Backend::Toy(ToyBackend {
                base,
                adapter,
                tokenizer,
            }),
            fingerprint,
        })
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn tag(&self) -> BackendTag {
        match self.backend {
            Backend::Mock(_) => BackendTag::Mock,
            Backend::Remote(_) => BackendTag::Remote,
            Backend::Toy(_) => BackendTag::Toy,
        }
    }
}

/// Keeps the first `max_tokens` whitespace tokens; prompts within the
/// limit are returned unchanged.
pub fn truncate_prompt(prompt: &str, max_tokens: usize) -> std::borrow::Cow<'_, str> {
    let counter = WhitespaceCounter;
    if counter.count(prompt) <= max_tokens {
        std::borrow::Cow::Borrowed(prompt)
    } else {
        std::borrow::Cow::Owned(counter.truncate_head(prompt, max_tokens))
    }
}

struct ToyScorer<'m> {
    model: &'m AdaptedModel<'m>,
    enc: Array2<f64>,
    active: usize,
}

impl StepScorer for ToyScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.active
    }

    fn eos(&self) -> u32 {
        EOS
    }

    /// Renormalized over real words and EOS; PAD, UNK and BOS are never
    /// emitted.
    fn log_probs(&self, prefix: &[u32]) -> Vec<f64> {
        let mut lp = self.model.next_log_probs(&self.enc, prefix, self.active);
        for id in [PAD, UNK, BOS] {
            if let Some(v) = lp.get_mut(id as usize) {
                *v = f64::NEG_INFINITY;
            }
        }
        let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm = max + lp.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        lp.iter_mut().for_each(|v| *v -= norm);
        lp
    }
}

/// Beam decode on the toy backend. Returns generated ids (EOS excluded).
pub fn beam_decode(
    model: &AdaptedModel,
    src: &[u32],
    active_vocab: usize,
    cfg: &DecodeConfig,
) -> Vec<u32> {
    let scorer = ToyScorer {
        model,
        enc: model.encode(src),
        active: active_vocab,
    };
    let max_steps = cfg
        .max_output_tokens
        .min(model.base().config().max_output_len);
    let bc = BeamConfig {
        beam: cfg.beam.max(1),
        max_steps,
        length_penalty: cfg.length_penalty,
    };
    beam_search(&scorer, bc).tokens
}

fn clip_output(text: String, max_tokens: usize) -> (String, usize) {
    let n = WhitespaceCounter.count(&text);
    if n <= max_tokens {
        (text, n)
    } else {
        (
            WhitespaceCounter.truncate_head(&text, max_tokens),
            max_tokens,
        )
    }
}

/// Generates a completion for `prompt`.
pub fn generate(
    handle: &ModelHandle,
    prompt: &str,
    cfg: &DecodeConfig,
) -> Result<GenerationResult, GatewayError> {
    cfg.validate()?;
    if prompt.trim().is_empty() {
        return Err(GatewayError::EmptyPrompt);
    }
    let prompt = truncate_prompt(prompt, cfg.max_input_tokens);
    let start = Instant::now();
    let (text, token_count) = match &handle.backend {
        Backend::Mock(script) => {
            clip_output(script.respond(&prompt).to_string(), cfg.max_output_tokens)
        }
        Backend::Remote(remote) => clip_output(
            remote.complete(&prompt, cfg.max_output_tokens, cfg.beam)?,
            cfg.max_output_tokens,
        ),
        Backend::Toy(toy) => {
            let mut tokenizer = toy.tokenizer.clone();
            tokenizer.extend([prompt.as_ref()]);
            let model = AdaptedModel::new(&toy.base, toy.adapter.as_deref())?;
            let max_in = cfg
                .max_input_tokens
                .saturating_add(1)
                .min(toy.base.config().max_input_len);
            let src = encode_source(&tokenizer, &prompt, max_in);
            let ids = beam_decode(&model, &src, tokenizer.len(), cfg);
            (tokenizer.decode(&ids), ids.len())
        }
    };
    Ok(GenerationResult {
        text,
        token_count,
        backend: handle.tag(),
        latency: start.elapsed().as_secs_f64(),
    })
}
