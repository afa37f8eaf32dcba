//! End-to-end runs of the four personalization modes, their evaluation,
//! the profile-size analysis, and report output.

mod analysis;
mod config;
mod privacy;
mod report;
mod run;

pub use analysis::{
    analyze_rows, correlate, improvement, profile_size_analysis, AnalysisError, CorrelationReport,
    Z_95,
};
pub use config::{BackendConfig, Mode, RunConfig, RunPaths};
pub use privacy::{CrossAccess, PrivacyAudit, PrivacySummary, Resource, UserScope};
pub use report::{
    compare, delta_row, emit_report, format_delta, format_relative, load_report, render,
    render_csv, render_markdown, render_report_markdown, Comparison, DeltaRow, ReportFormat,
};
pub use run::{
    run_dataset, run_task, user_seed, AdapterSource, EvalReport, Latency, PerUserResult, UserError,
    EMBEDDING_DIM,
};

use crate::data::DataError;
use crate::store::StoreError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("backend: {0}")]
    Backend(String),
    #[error("{failed} of {total} users failed (first: {first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl ExperimentError {
    /// Process exit code: 2 configuration, 3 data, 4 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Data(_)
            | ExperimentError::Io(_)
            | ExperimentError::Store(_)
            | ExperimentError::Analysis(_) => 3,
            ExperimentError::Backend(_) | ExperimentError::TooManyFailures { .. } => 4,
        }
    }
}
