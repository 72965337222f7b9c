use std::collections::HashSet;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Passage, PassageSource, Ranked, RetrievalError, Retriever};
use crate::gateway::{elapsed_ms, Throttle};

fn default_result_count() -> usize {
    super::DEFAULT_TOTAL_K
}

fn default_key_header() -> String {
    "X-Subscription-Token".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebSearchConfig {
    /// Search endpoint, e.g. `https://api.search.brave.com/res/v1/web/search`.
    pub base_url: String,
    pub api_key_env: String,
    #[serde(default = "default_result_count")]
    pub result_count: usize,
    #[serde(default = "default_key_header")]
    pub key_header: String,
}

/// Web-search API client returning result snippets as passages.
///
/// Sends `GET {base_url}?q=<query>&count=<k>` with the API key in
/// `key_header`. Results are read from `web.results` (or a top-level
/// `results` array); each needs a `url` and a `description` or `snippet`.
#[derive(Debug, Clone)]
pub struct WebSearchClient {
    config: WebSearchConfig,
    client: reqwest::Client,
    throttle: Throttle,
}

impl WebSearchClient {
    pub fn new(config: WebSearchConfig, throttle: Throttle) -> Result<Self, RetrievalError> {
        if config.result_count == 0 {
            return Err(RetrievalError::InvalidArgument("result_count must be at least 1".into()));
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("reqwest client builds");
        Ok(Self { config, client, throttle })
    }

    pub fn config(&self) -> &WebSearchConfig {
        &self.config
    }

    pub async fn web_search(&self, query: &str, k: usize) -> Result<Vec<Passage>, RetrievalError> {
        if query.trim().is_empty() {
            return Err(RetrievalError::InvalidArgument("search query is empty".into()));
        }
        if k == 0 {
            return Err(RetrievalError::InvalidArgument("k must be at least 1".into()));
        }
        let key = std::env::var(&self.config.api_key_env).map_err(|_| {
            RetrievalError::Auth(format!("environment variable {} is not set", self.config.api_key_env))
        })?;
        let response = {
            let _permit = self.throttle.acquire().await;
            self.client
                .get(&self.config.base_url)
                .query(&[("q", query), ("count", &k.to_string())])
                .header(self.config.key_header.as_str(), key)
                .header(reqwest::header::ACCEPT, "application/json")
                .send()
                .await
                .map_err(|e| RetrievalError::Transport(e.to_string()))?
        };
        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(RetrievalError::Auth(format!("search engine returned {status}")));
        }
        let body = response
            .text()
            .await
            .map_err(|e| RetrievalError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(RetrievalError::Transport(format!("search engine returned {status}: {body}")));
        }
        parse_results(&body, k)
    }
}

fn parse_results(body: &str, k: usize) -> Result<Vec<Passage>, RetrievalError> {
    let json: Value = serde_json::from_str(body).map_err(|e| RetrievalError::Malformed(e.to_string()))?;
    let results = match json.pointer("/web/results").or_else(|| json.get("results")) {
        Some(Value::Array(items)) => items.as_slice(),
        Some(_) => return Err(RetrievalError::Malformed("results is not an array".into())),
        // No web section at all: the engine found nothing.
        None => &[],
    };

    let mut seen = HashSet::new();
    let mut passages = Vec::new();
    for item in results {
        if passages.len() == k {
            break;
        }
        let url = item
            .get("url")
            .and_then(Value::as_str)
            .ok_or_else(|| RetrievalError::Malformed(format!("result without url: {item}")))?;
        let text = item
            .get("description")
            .or_else(|| item.get("snippet"))
            .and_then(Value::as_str)
            .unwrap_or_default();
        if text.trim().is_empty() || !seen.insert(url.to_owned()) {
            continue;
        }
        passages.push(Passage {
            id: url.to_owned(),
            title: item.get("title").and_then(Value::as_str).map(str::to_owned),
            text: text.to_owned(),
            score: 1.0 / (passages.len() + 1) as f64,
            source: PassageSource::Web,
        });
    }
    Ok(passages)
}

#[async_trait]
impl Retriever for WebSearchClient {
    async fn retrieve(&self, query: &str, k: usize) -> Result<Ranked, RetrievalError> {
        let start = Instant::now();
        let passages = self.web_search(query, k).await?;
        Ok(Ranked {
            passages,
            latency_ms: elapsed_ms(start),
        })
    }
}
