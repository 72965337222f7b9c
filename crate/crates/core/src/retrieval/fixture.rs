use std::collections::{HashMap, HashSet};
use std::path::Path;

use async_trait::async_trait;
use serde::Deserialize;

use super::{Passage, Ranked, RetrievalError, Retriever};

/// Canned retriever: fixed passage lists per query, zero latency.
#[derive(Debug, Clone, Default)]
pub struct FixtureRetriever {
    by_query: HashMap<String, Vec<Passage>>,
    fallback: Vec<Passage>,
    failing: HashSet<String>,
}

#[derive(Deserialize)]
struct FixtureLine {
    #[serde(default)]
    query: Option<String>,
    passages: Vec<Passage>,
}

impl FixtureRetriever {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, query: impl Into<String>, passages: Vec<Passage>) -> Self {
        self.by_query.insert(query.into(), passages);
        self
    }

    /// Passages returned for queries without an entry of their own.
    pub fn with_fallback(mut self, passages: Vec<Passage>) -> Self {
        self.fallback = passages;
        self
    }

    pub fn failing_on(mut self, query: impl Into<String>) -> Self {
        self.failing.insert(query.into());
        self
    }

    /// Loads `{"query": "...", "passages": [...]}` lines; a line without a
    /// query sets the fallback list.
    pub fn from_file(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path)?;
        let mut fixture = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FixtureLine = serde_json::from_str(line).map_err(|e| RetrievalError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed.query {
                Some(q) => fixture.by_query.insert(q, parsed.passages),
                None => Some(std::mem::replace(&mut fixture.fallback, parsed.passages)),
            };
        }
        Ok(fixture)
    }
}

#[async_trait]
impl Retriever for FixtureRetriever {
    async fn retrieve(&self, query: &str, k: usize) -> Result<Ranked, RetrievalError> {
        if self.failing.contains(query) {
            return Err(RetrievalError::Transport(format!("fixture configured to fail on {query:?}")));
        }
        let list = self.by_query.get(query).unwrap_or(&self.fallback);
        Ok(Ranked {
            passages: list.iter().take(k).cloned().collect(),
            latency_ms: 0.0,
        })
    }
}
