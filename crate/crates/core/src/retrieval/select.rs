use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{RetrievalError, RetrieverKind};
use crate::data::UserRecord;

/// How the per-input retriever is chosen when the run asks for
/// [`RetrieverKind::Selected`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum SelectionPolicy {
    Fixed {
        kind: RetrieverKind,
    },
    /// Argmax of per-retriever development scores for this input; an
    /// upper bound for any learned selector.
    Oracle,
    /// Recency for long, fully dated profiles, BM25 otherwise.
    Heuristic {
        min_profile_len: usize,
    },
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::Heuristic { min_profile_len: 8 }
    }
}

pub fn select_retriever(
    policy: SelectionPolicy,
    input: &UserRecord,
    candidates: &[RetrieverKind],
    dev_scores: Option<&HashMap<RetrieverKind, f64>>,
) -> Result<RetrieverKind, RetrievalError> {
    if candidates.is_empty() {
        return Err(RetrievalError::NoCandidates);
    }
    let resolved = match policy {
        SelectionPolicy::Fixed { kind } => kind,
        SelectionPolicy::Oracle => {
            let scores = dev_scores.ok_or(RetrievalError::MissingScores)?;
            let mut best: Option<(RetrieverKind, f64)> = None;
            for &c in candidates {
                if let Some(&s) = scores.get(&c) {
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((c, s));
                    }
                }
            }
            best.ok_or(RetrievalError::MissingScores)?.0
        }
        SelectionPolicy::Heuristic { min_profile_len } => {
            let all_dated =
                !input.profile.is_empty() && input.profile.iter().all(|e| e.date.is_some());
            if all_dated && input.profile.len() > min_profile_len {
                RetrieverKind::Recency
            } else {
                RetrieverKind::Bm25
            }
        }
    };
    if resolved == RetrieverKind::Selected {
        return Err(RetrievalError::UnresolvedSelection);
    }
    Ok(resolved)
}
