use serde::{Deserialize, Serialize};

use super::bm25::searchable_text;
use super::{rank, Retrieval, RetrievalError, RetrieverKind};
use crate::data::{ProfileEntry, TaskId};
use crate::gateway::http::{HttpClient, HttpError};
use crate::text::{fnv1a64, word_tokens};

#[derive(Debug, thiserror::Error)]
#[error("embedding backend: {0}")]
pub struct EmbeddingError(pub String);

/// Maps text to a fixed-dimension dense vector. Implementations must be
/// deterministic and safe to call from several threads.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbeddingError>;
}

/// Deterministic bag-of-words embedder: every token is hashed onto one
/// basis direction, counts are summed and the vector is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> HashEmbedder {
        assert!(dim >= 1, "embedding dimension must be positive");
        HashEmbedder { dim }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let mut v = vec![0.0; self.dim];
        for t in word_tokens(text) {
            v[(fnv1a64(t.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

/// Embedder behind an HTTP endpoint: `POST {model, input}` answered with
/// `{embedding: [..]}`, using the gateway's retry policy.
pub struct RemoteEmbedder {
    client: HttpClient,
    url: String,
    model: String,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(
        client: HttpClient,
        url: impl Into<String>,
        model: impl Into<String>,
        dim: usize,
    ) -> RemoteEmbedder {
        RemoteEmbedder {
            client,
            url: url.into(),
            model: model.into(),
            dim,
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let resp: EmbedResponse = self
            .client
            .post_json(
                &self.url,
                &EmbedRequest {
                    model: &self.model,
                    input: text,
                },
            )
            .map_err(|e: HttpError| EmbeddingError(e.to_string()))?;
        if resp.embedding.len() != self.dim {
            return Err(EmbeddingError(format!(
                "expected dimension {}, got {}",
                self.dim,
                resp.embedding.len()
            )));
        }
        Ok(resp.embedding)
    }
}

/// Cosine similarity; a zero-norm side yields -2, below every real
/// cosine, so it ranks last.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        -2.0
    } else {
        dot / (na * nb)
    }
}

/// Ranks pre-computed entry vectors against a query vector.
pub fn rank_vectors(
    query: &[f64],
    entries: &[Vec<f64>],
    k: usize,
) -> Result<Retrieval, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let scores: Vec<f64> = entries.iter().map(|e| cosine(query, e)).collect();
    Ok(Retrieval {
        hits: rank(&scores, k, RetrieverKind::Embedding),
        degenerate: false,
    })
}

/// Top-`k` profile entries by cosine similarity to the query.
pub fn retrieve_embedding(
    provider: &dyn EmbeddingProvider,
    profile: &[ProfileEntry],
    task: TaskId,
    query: &str,
    k: usize,
) -> Result<Retrieval, RetrievalError> {
    if provider.dimension() == 0 {
        return Err(RetrievalError::Backend {
            entry: None,
            message: "zero-dimensional provider".into(),
        });
    }
    let q = provider.embed(query).map_err(|e| RetrievalError::Backend {
        entry: None,
        message: e.0,
    })?;
    let mut vectors = Vec::with_capacity(profile.len());
    for entry in profile {
        let v =
            provider
                .embed(searchable_text(task, entry)?)
                .map_err(|e| RetrievalError::Backend {
                    entry: Some(entry.id.clone()),
                    message: e.0,
                })?;
        vectors.push(v);
    }
    rank_vectors(&q, &vectors, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_vector_wins() {
        let r = rank_vectors(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]], 1).unwrap();
        assert_eq!(r.indices(), vec![0]);
        assert_eq!(r.hits[0].score, 1.0);
    }

    #[test]
    fn zero_vector_ranks_last() {
        let r = rank_vectors(&[1.0, 0.0], &[vec![0.0, 0.0], vec![-1.0, 0.0]], 2).unwrap();
        assert_eq!(r.indices(), vec![1, 0]);
        assert_eq!(r.hits[1].score, -2.0);
    }

    #[test]
    fn cosine_ties_break_by_index() {
        let r = rank_vectors(
            &[1.0, 1.0],
            &[vec![2.0, 0.0], vec![1.0, 1.0], vec![0.0, 3.0]],
            3,
        )
        .unwrap();
        assert_eq!(r.indices(), vec![1, 0, 2]);
        assert!((r.hits[0].score - 1.0).abs() < 1e-12);
        assert!((r.hits[1].score - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((r.hits[2].score - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn hash_embedder_is_deterministic_and_normalized() {
        let e = HashEmbedder::new(16);
        let a = e.embed("Red cat, red cat").unwrap();
        assert_eq!(a, e.embed("red CAT red cat").unwrap());
        assert_eq!(a.len(), 16);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(e.embed("...").unwrap().iter().all(|x| *x == 0.0));
    }

    struct Failing;
    impl EmbeddingProvider for Failing {
        fn dimension(&self) -> usize {
            2
        }
        fn embed(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
            if text == "bad" {
                Err(EmbeddingError("boom".into()))
            } else {
                Ok(vec![1.0, 0.0])
            }
        }
    }

    #[test]
    fn provider_failure_names_entry() {
        let profile = vec![
            ProfileEntry::new("ok", [("text", "fine")]),
            ProfileEntry::new("e2", [("text", "bad")]),
        ];
        match retrieve_embedding(&Failing, &profile, TaskId::Lamp7, "q", 1) {
            Err(RetrievalError::Backend { entry, .. }) => assert_eq!(entry.as_deref(), Some("e2")),
            other => panic!("{other:?}"),
        }
    }
}
