use std::collections::BTreeMap;

use super::{rank, Retrieval, RetrievalError, RetrieverKind, ScoredEntry};
use crate::data::{ProfileEntry, TaskId};
use crate::text::word_tokens;

/// Okapi BM25 parameters, with the negative-IDF floor used by the
/// `rank_bm25` Python package.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    /// Negative IDFs are replaced by `epsilon * mean(idf)`.
    pub epsilon: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: 1.5,
            b: 0.75,
            epsilon: 0.25,
        }
    }
}

pub const TOKENIZER_ID: &str = "lower-alnum-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Posting {
    pub entry: usize,
    pub tf: u32,
}

/// Inverted index over one user's profile.
#[derive(Debug, Clone)]
pub struct ProfileIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    idf: BTreeMap<String, f64>,
    doc_lengths: Vec<usize>,
    avg_len: f64,
    params: Bm25Params,
    tokenizer: &'static str,
}

impl ProfileIndex {
    pub fn entry_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_lengths(&self) -> &[usize] {
        &self.doc_lengths
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.idf.get(term).copied()
    }

    pub fn tokenizer_id(&self) -> &'static str {
        self.tokenizer
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Index pre-tokenized documents. Used directly by tests and by
    /// [`build_index`] after field extraction.
    pub fn from_texts<S: AsRef<str>>(
        docs: &[S],
        params: Bm25Params,
    ) -> Result<ProfileIndex, RetrievalError> {
        if docs.is_empty() {
            return Err(RetrievalError::EmptyProfile);
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            let tokens = word_tokens(doc.as_ref());
            doc_lengths.push(tokens.len());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    entry: i,
                    tf: count,
                });
            }
        }
        let total: usize = doc_lengths.iter().sum();
        if total == 0 {
            return Err(RetrievalError::EmptyIndex);
        }
        let n = docs.len() as f64;
        let mut idf = BTreeMap::new();
        let mut idf_sum = 0.0;
        let mut negative = Vec::new();
        for (term, list) in &postings {
            let df = list.len() as f64;
            let v = (n - df + 0.5).ln() - (df + 0.5).ln();
            idf_sum += v;
            if v < 0.0 {
                negative.push(term.clone());
            }
            idf.insert(term.clone(), v);
        }
        let floor = params.epsilon * idf_sum / idf.len() as f64;
        for term in negative {
            idf.insert(term, floor);
        }
        Ok(ProfileIndex {
            postings,
            idf,
            avg_len: total as f64 / docs.len() as f64,
            doc_lengths,
            params,
            tokenizer: TOKENIZER_ID,
        })
    }

    /// BM25 score of every entry for `query`, in entry order.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let Bm25Params { k1, b, .. } = self.params;
        let mut scores = vec![0.0; self.entry_count()];
        for term in word_tokens(query) {
            let (Some(list), Some(idf)) = (self.postings.get(&term), self.idf.get(&term)) else {
                continue;
            };
            for p in list {
                let tf = f64::from(p.tf);
                let len_norm = 1.0 - b + b * self.doc_lengths[p.entry] as f64 / self.avg_len;
                scores[p.entry] += idf * (tf * (k1 + 1.0)) / (tf + k1 * len_norm);
            }
        }
        scores
    }
}

/// Text of the entry's searchable field for `task`.
pub fn searchable_text(task: TaskId, entry: &ProfileEntry) -> Result<&str, RetrievalError> {
    entry
        .field(task, task.searchable_role())
        .map_err(|e| RetrievalError::Data(e.to_string()))
}

/// Indexes the task's searchable field of each profile entry.
pub fn build_index(profile: &[ProfileEntry], task: TaskId) -> Result<ProfileIndex, RetrievalError> {
    let texts = profile
        .iter()
        .map(|e| searchable_text(task, e))
        .collect::<Result<Vec<_>, _>>()?;
    ProfileIndex::from_texts(&texts, Bm25Params::default())
}

/// Top-`k` entries by BM25 score. A query with no tokens yields the
/// first `k` entries with score 0 and the `degenerate` flag set.
pub fn retrieve_bm25(
    index: &ProfileIndex,
    query: &str,
    k: usize,
) -> Result<Retrieval, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if word_tokens(query).is_empty() {
        let hits = (0..k.min(index.entry_count()))
            .map(|i| ScoredEntry {
                entry: i,
                score: 0.0,
                kind: RetrieverKind::Bm25,
            })
            .collect();
        return Ok(Retrieval {
            hits,
            degenerate: true,
        });
    }
    let scores = index.scores(query);
    Ok(Retrieval {
        hits: rank(&scores, k, RetrieverKind::Bm25),
        degenerate: false,
    })
}
