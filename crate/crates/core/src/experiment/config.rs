use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::data::TaskId;
use crate::gateway::{DecodeConfig, MockScript};
use crate::lora::{LoraConfig, ToyModelConfig, TrainConfig};
use crate::retrieval::{RetrieverKind, SelectionPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    None,
    Rag,
    Peft,
    PeftRag,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::None, Mode::Rag, Mode::Peft, Mode::PeftRag];

    pub fn uses_retrieval(self) -> bool {
        matches!(self, Mode::Rag | Mode::PeftRag)
    }

    pub fn uses_adapter(self) -> bool {
        matches!(self, Mode::Peft | Mode::PeftRag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Rag => "rag",
            Mode::Peft => "peft",
            Mode::PeftRag => "peft_rag",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(Mode::None),
            "rag" => Ok(Mode::Rag),
            "peft" => Ok(Mode::Peft),
            "peft_rag" => Ok(Mode::PeftRag),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Mock {
        script: MockScript,
    },
    /// Endpoint falls back to the environment when absent.
    Remote {
        model: String,
        endpoint: Option<String>,
    },
    Toy {
        model: ToyModelConfig,
        seed: u64,
    },
}

impl BackendConfig {
    pub fn toy_default() -> BackendConfig {
        BackendConfig::Toy {
            model: ToyModelConfig::default(),
            seed: 0,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, BackendConfig::Toy { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunPaths {
    pub data: Option<PathBuf>,
    pub golds: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskId,
    pub mode: Mode,
    pub retriever: RetrieverKind,
    pub selection: SelectionPolicy,
    pub k: usize,
    pub lora: LoraConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub backend: BackendConfig,
    pub seed: u64,
    /// Largest tolerated fraction of failed users.
    pub max_error_fraction: f64,
    pub paths: RunPaths,
    /// Worker threads. Not part of the serialized snapshot: results do
    /// not depend on it.
    #[serde(skip, default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl RunConfig {
    pub fn new(task: TaskId, mode: Mode, backend: BackendConfig) -> RunConfig {
        RunConfig {
            task,
            mode,
            retriever: RetrieverKind::Bm25,
            selection: SelectionPolicy::default(),
            k: 4,
            lora: LoraConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            backend,
            seed: 0,
            max_error_fraction: 0.1,
            paths: RunPaths::default(),
            workers: 1,
        }
    }

    pub fn with_mode(&self, mode: Mode) -> RunConfig {
        RunConfig {
            mode,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |m: String| Err(ExperimentError::Config(m));
        if self.k == 0 {
            return cfg("k must be at least 1".into());
        }
        if self.workers == 0 {
            return cfg("at least one worker is required".into());
        }
        if !(0.0..=1.0).contains(&self.max_error_fraction) {
            return cfg(format!(
                "error tolerance {} outside [0, 1]",
                self.max_error_fraction
            ));
        }
        if self.mode.uses_adapter() && !self.backend.is_trainable() {
            return cfg(format!(
                "mode {} needs the toy backend, which can host adapters",
                self.mode
            ));
        }
        self.decode
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if self.mode.uses_adapter() {
            self.lora
                .validate()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            self.train
                .validate()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        Ok(())
    }
}
