//! Low-rank adaptation of a frozen toy encoder-decoder.
//!
//! An adapted projection computes `x·W0 + (alpha/r)·(x·A)·B` with `W0`
//! frozen and only `A` (`d × r`) and `B` (`r × k`) trainable.

mod adapter;
mod model;
mod train;
mod vocab;

pub use adapter::{
    attach_adapters, merge_weights, trainable_param_count, AdapterMatrix, AttentionBlock,
    LoraAdapter, LoraConfig, Projection, Site, A_INIT_STD,
};
pub use model::{AdaptedModel, LoraGrads, LoraPair, LoraWeights, ToyModel, ToyModelConfig};
pub use train::{
    encode_source, encode_target, learning_rate_at, train_user_adapter, TrainConfig, TrainReport,
    TrainedAdapter,
};
pub use vocab::{WordTokenizer, BOS, EOS, PAD, UNK};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LoraError {
    #[error("unknown adapter target `{0}`")]
    UnknownTarget(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("adapter was trained against a different base model")]
    WrongBaseModel,
    #[error("no training pairs")]
    EmptyTrainingSet,
    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
}
