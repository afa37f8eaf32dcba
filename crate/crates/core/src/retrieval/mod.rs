//! Retrieval over a single user's profile.
//!
//! Every index and ranking here is built from one profile; there is no
//! cross-user index.

mod bm25;
mod embedding;
mod recency;
mod select;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bm25::{
    build_index, retrieve_bm25, searchable_text, Bm25Params, Posting, ProfileIndex, TOKENIZER_ID,
};
pub use embedding::{
    cosine, rank_vectors, retrieve_embedding, EmbeddingError, EmbeddingProvider, HashEmbedder,
    RemoteEmbedder,
};
pub use recency::retrieve_recency;
pub use select::{select_retriever, SelectionPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    Bm25,
    Recency,
    Embedding,
    /// Resolved per input by a [`SelectionPolicy`].
    Selected,
}

impl fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrieverKind::Bm25 => "bm25",
            RetrieverKind::Recency => "recency",
            RetrieverKind::Embedding => "embedding",
            RetrieverKind::Selected => "selected",
        })
    }
}

impl FromStr for RetrieverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bm25" => Ok(RetrieverKind::Bm25),
            "recency" => Ok(RetrieverKind::Recency),
            "embed" | "embedding" => Ok(RetrieverKind::Embedding),
            "select" | "selected" => Ok(RetrieverKind::Selected),
            other => Err(format!("unknown retriever `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    /// Position of the entry in the profile.
    pub entry: usize,
    pub score: f64,
    pub kind: RetrieverKind,
}

/// A ranked list, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Retrieval {
    pub hits: Vec<ScoredEntry>,
    /// Set when the query had no usable tokens and the ranking fell back
    /// to profile order.
    pub degenerate: bool,
}

impl Retrieval {
    pub fn indices(&self) -> Vec<usize> {
        self.hits.iter().map(|h| h.entry).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("retrieval count k must be at least 1")]
    ZeroK,
    #[error("profile is empty")]
    EmptyProfile,
    #[error("no profile entry has any indexable token")]
    EmptyIndex,
    #[error("profile data: {0}")]
    Data(String),
    #[error("retrieval backend failed{}: {message}", entry.as_ref().map(|e| format!(" on entry `{e}`")).unwrap_or_default())]
    Backend {
        entry: Option<String>,
        message: String,
    },
    #[error("no retriever candidates")]
    NoCandidates,
    #[error("oracle selection needs development scores for the candidates")]
    MissingScores,
    #[error("selection policy resolved to `selected`")]
    UnresolvedSelection,
}

/// Sort by score descending, ties by ascending entry index, keep `k`.
pub(crate) fn rank(scores: &[f64], k: usize, kind: RetrieverKind) -> Vec<ScoredEntry> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
        .into_iter()
        .take(k)
        .map(|entry| ScoredEntry {
            entry,
            score: scores[entry],
            kind,
        })
        .collect()
}
