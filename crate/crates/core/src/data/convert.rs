//! Turning profile entries into per-user supervised training pairs.

use rand::Rng;

use super::record::ProfileEntry;
use super::task::{FieldRole, TaskId, MOVIE_TAGS};
use super::DataError;
use crate::text::whitespace_token_spans;

pub const TWEET_COMPLETION_PREFIX: &str = "Complete the following tweet: ";

/// Bounds of the prefix fraction drawn for tweet completion pairs.
pub const TWEET_PREFIX_FRACTION: (f64, f64) = (0.10, 0.20);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub input: String,
    pub target: String,
    pub source_entry_id: String,
}

pub fn movie_tagging_input(description: &str) -> String {
    format!(
        "Which tag does this movie relate to among the following tags? Just answer with the tag name \
         without further explanation. tags: [{}] description: {description}",
        MOVIE_TAGS.join(", ")
    )
}

pub fn product_rating_input(review: &str) -> String {
    format!(
        "What is the score of the following review on a scale of 1 to 5? just answer with 1, 2, 3, 4, \
         or 5 without further explanation. review: {review}"
    )
}

/// Number of leading tokens that form the input when a text of
/// `token_count` tokens is split at `fraction`: `ceil(fraction * n)`.
pub fn split_point(fraction: f64, token_count: usize) -> usize {
    // The epsilon absorbs products like 0.1 * 30 = 3.0000000000000004.
    let raw = (fraction * token_count as f64 - 1e-9).ceil() as usize;
    raw.clamp(1, token_count.saturating_sub(1).max(1))
}

/// Tweet completion pair at a given prefix fraction.
pub fn split_tweet(entry_id: &str, tweet: &str, fraction: f64) -> Result<TrainingPair, DataError> {
    let spans = whitespace_token_spans(tweet);
    if spans.len() < 2 {
        return Err(DataError::DegenerateEntry {
            entry: entry_id.to_string(),
            tokens: spans.len(),
        });
    }
    let cut = split_point(fraction, spans.len());
    let prefix = &tweet[spans[0].0..spans[cut - 1].1];
    let suffix = &tweet[spans[cut].0..spans[spans.len() - 1].1];
    Ok(TrainingPair {
        input: format!("{TWEET_COMPLETION_PREFIX}{prefix}"),
        target: suffix.to_string(),
        source_entry_id: entry_id.to_string(),
    })
}

/// Maps one profile entry to an `(input, target)` pair.
///
/// Pair-shaped profiles (LaMP-2..6) are rendered deterministically; the
/// rng is only consulted for tweet completion (LaMP-7).
pub fn convert_profile_entry<R: Rng + ?Sized>(
    task: TaskId,
    entry: &ProfileEntry,
    rng: &mut R,
) -> Result<TrainingPair, DataError> {
    let f = |role| entry.field(task, role);
    let (input, target) = match task {
        TaskId::Lamp1 => (
            format!("Write an abstract for this title: {}", f(FieldRole::Title)?),
            f(FieldRole::Abstract)?,
        ),
        TaskId::Lamp2 => (
            movie_tagging_input(f(FieldRole::Description)?),
            f(FieldRole::Tag)?,
        ),
        TaskId::Lamp3 => (
            product_rating_input(f(FieldRole::Text)?),
            f(FieldRole::Score)?,
        ),
        TaskId::Lamp4 => (
            format!(
                "Generate a headline for the following article: {}",
                f(FieldRole::Text)?
            ),
            f(FieldRole::Title)?,
        ),
        TaskId::Lamp5 => (
            format!(
                "Generate a title for the following abstract of a paper: {}",
                f(FieldRole::Abstract)?
            ),
            f(FieldRole::Title)?,
        ),
        TaskId::Lamp6 => (
            format!(
                "Generate a subject for the following email: {}",
                f(FieldRole::Text)?
            ),
            f(FieldRole::Title)?,
        ),
        TaskId::Lamp7 => {
            let (lo, hi) = TWEET_PREFIX_FRACTION;
            let fraction = rng.random_range(lo..=hi);
            return split_tweet(&entry.id, f(FieldRole::Text)?, fraction);
        }
    };
    Ok(TrainingPair {
        input,
        target: target.to_string(),
        source_entry_id: entry.id.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserTrainingSet {
    pub pairs: Vec<TrainingPair>,
    /// Entries dropped because they were too short to split.
    pub skipped: usize,
}

/// Converts a whole profile in order, skipping degenerate entries.
pub fn build_user_training_set<R: Rng + ?Sized>(
    task: TaskId,
    profile: &[ProfileEntry],
    rng: &mut R,
) -> Result<UserTrainingSet, DataError> {
    let mut pairs = Vec::with_capacity(profile.len());
    let mut skipped = 0;
    for entry in profile {
        match convert_profile_entry(task, entry, rng) {
            Ok(p) => pairs.push(p),
            Err(DataError::DegenerateEntry { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if pairs.is_empty() {
        return Err(DataError::EmptyTrainingSet { skipped });
    }
    Ok(UserTrainingSet { pairs, skipped })
}
