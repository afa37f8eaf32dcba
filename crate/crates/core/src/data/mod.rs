//! LaMP-format datasets and the profile-to-training-pair conversion.

mod convert;
mod record;
mod task;

pub use convert::{
    build_user_training_set, convert_profile_entry, movie_tagging_input, product_rating_input,
    split_point, split_tweet, TrainingPair, UserTrainingSet, TWEET_COMPLETION_PREFIX,
    TWEET_PREFIX_FRACTION,
};
pub use record::{
    load_dataset, load_gold_outputs, parse_dataset, parse_gold_outputs, Dataset, EntryDate,
    ProfileEntry, UserRecord,
};
pub use task::{
    FieldRole, FieldSpec, TaskId, TaskKind, UnknownTask, CITATION_LABELS, MOVIE_TAGS, RATING_LABELS,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("malformed JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("record `{record}`: missing required field `{field}`")]
    MissingField { record: String, field: String },
    #[error("record `{record}`: field `{field}` is empty")]
    EmptyField { record: String, field: String },
    #[error("record `{record}`: {message}")]
    Schema { record: String, message: String },
    #[error("record `{record}`: field `{field}` does not belong to the {task} profile format")]
    TaskMismatch {
        record: String,
        field: String,
        task: TaskId,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("golds do not join: orphan gold ids {orphans:?}, records without gold {missing:?}")]
    Join {
        orphans: Vec<String>,
        missing: Vec<String>,
    },
    #[error("entry `{entry}` has {tokens} token(s); at least 2 are needed to split")]
    DegenerateEntry { entry: String, tokens: usize },
    #[error("no usable training pairs ({skipped} degenerate entries skipped)")]
    EmptyTrainingSet { skipped: usize },
}
