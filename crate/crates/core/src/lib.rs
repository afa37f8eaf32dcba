//! Per-user personalization of sequence-to-sequence language models.
//!
//! Three strategies share one pipeline:
//!
//! * **RAG**: retrieve `k` entries from the user's own profile and fold
//!   them into the prompt ([`retrieval`], [`prompting`]).
//! * **PEFT**: train a per-user low-rank adapter on pairs converted from
//!   the profile ([`data`], [`lora`], [`store`]).
//! * **PEFT-RAG**: prompt the adapted model with the retrieval prompt.
//!
//! [`experiment`] runs any of them over a LaMP-format dataset, evaluates
//! with [`metrics`], and enforces that each user's work only touches
//! that user's data.

pub mod data;
pub mod experiment;
pub mod gateway;
pub mod lora;
pub mod metrics;
pub mod prompting;
pub mod retrieval;
pub mod store;
pub mod synthetic;
pub mod text;
