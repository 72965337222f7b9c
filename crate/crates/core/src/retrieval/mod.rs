//! Retrievers and multi-query merging.
//!
//! Two interchangeable backends implement [`Retriever`]: a web-search client
//! returning result snippets and a dense index searched by exact L2 distance.
//! [`retrieve_multi`] fans a set of queries out to one retriever and merges
//! the per-query lists into a single, deterministic, duplicate-free context.

mod dense;
mod embed;
mod fixture;
mod store;
mod web;

use std::collections::HashSet;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use dense::{
    dense_top_k, ingest_corpus, l2_distance_squared, read_corpus, CorpusRecord, DenseIndex, DenseRetriever,
};
pub use embed::{Embedder, EmbeddingClient, EmbeddingProviderConfig};
pub use fixture::FixtureRetriever;
pub use store::{load_index, save_index, IndexManifest};
pub use web::{WebSearchClient, WebSearchConfig};

/// Number of passages handed to the reader unless configured otherwise.
pub const DEFAULT_TOTAL_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("dimension mismatch{}: expected {expected}, found {found}", record.as_ref().map(|r| format!(" at record {r}")).unwrap_or_default())]
    DimensionMismatch {
        record: Option<String>,
        expected: usize,
        found: usize,
    },
    #[error("index is empty")]
    EmptyIndex,
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("index integrity check failed: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassageSource {
    Web,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    /// URL for web results, corpus id for dense results.
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
    /// Rank score for web results; negated L2 distance for dense results.
    pub score: f64,
    pub source: PassageSource,
}

/// One backend answer: passages best first, plus the time the backend spent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ranked {
    pub passages: Vec<Passage>,
    pub latency_ms: f64,
}

#[async_trait]
pub trait Retriever: Send + Sync {
    /// Top `k` passages for `query`. Fewer than `k` is not an error.
    async fn retrieve(&self, query: &str, k: usize) -> Result<Ranked, RetrievalError>;
}

/// How the passage budget is shared between the queries of one question.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Every query asks for `total_k`; the merged list is cut to `total_k`.
    #[default]
    SharedBudget,
    /// Every query contributes up to `total_k`; the merged list is not cut.
    PerQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub query: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultiRetrieval {
    pub passages: Vec<Passage>,
    /// Queries whose backend call failed while at least one other succeeded.
    pub failures: Vec<QueryFailure>,
    pub latency_ms: f64,
}

/// Round-robin interleave of ranked lists; the first occurrence of an id wins.
pub fn merge_round_robin(lists: &[Vec<Passage>], limit: Option<usize>) -> Vec<Passage> {
    let mut seen = HashSet::new();
    let mut merged = Vec::new();
    let longest = lists.iter().map(Vec::len).max().unwrap_or(0);
    'outer: for rank in 0..longest {
        for list in lists {
            if limit.is_some_and(|l| merged.len() >= l) {
                break 'outer;
            }
            if let Some(p) = list.get(rank) {
                if seen.insert(p.id.clone()) {
                    merged.push(p.clone());
                }
            }
        }
    }
    merged
}

/// Retrieves for each query in order and merges the results.
///
/// Fails only if every query fails, with the first error.
pub async fn retrieve_multi(
    retriever: &dyn Retriever,
    queries: &[String],
    total_k: usize,
    mode: MergeMode,
) -> Result<MultiRetrieval, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::InvalidArgument("no queries to retrieve".into()));
    }
    if total_k == 0 {
        return Err(RetrievalError::InvalidArgument("total_k must be at least 1".into()));
    }
    let mut latency_ms = 0.0;
    let mut lists = Vec::with_capacity(queries.len());
    let mut failures = Vec::new();
    let mut first_error = None;
    for query in queries {
        match retriever.retrieve(query, total_k).await {
            Ok(ranked) => {
                latency_ms += ranked.latency_ms;
                lists.push(ranked.passages);
            }
            Err(e) => {
                failures.push(QueryFailure {
                    query: query.clone(),
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if lists.is_empty() {
        return Err(first_error.expect("every query failed, so an error was recorded"));
    }
    let limit = match mode {
        MergeMode::SharedBudget => Some(total_k),
        MergeMode::PerQuery => None,
    };
    Ok(MultiRetrieval {
        passages: merge_round_robin(&lists, limit),
        failures,
        latency_ms,
    })
}
