use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::gateway::{http::endpoint_url, Throttle};

/// Turns query text into a vector in the index's embedding space.
#[async_trait]
pub trait Embedder: Send + Sync {
    async fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub base_url: String,
    pub model_id: String,
    pub dim: usize,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

/// Client for an OpenAI-compatible `POST {base_url}/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct EmbeddingClient {
    config: EmbeddingProviderConfig,
    client: reqwest::Client,
    throttle: Throttle,
}

impl EmbeddingClient {
    pub fn new(config: EmbeddingProviderConfig, throttle: Throttle) -> Self {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("reqwest client builds");
        Self { config, client, throttle }
    }

    pub fn config(&self) -> &EmbeddingProviderConfig {
        &self.config
    }
}

#[async_trait]
impl Embedder for EmbeddingClient {
    async fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        if text.trim().is_empty() {
            return Err(RetrievalError::InvalidArgument("cannot embed empty text".into()));
        }
        let mut request = self
            .client
            .post(endpoint_url(&self.config.base_url, "embeddings"))
            .json(&EmbeddingRequest {
                model: &self.config.model_id,
                input: text,
            });
        if let Some(var) = &self.config.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| RetrievalError::Auth(format!("environment variable {var} is not set")))?;
            request = request.bearer_auth(key);
        }
        let response = {
            let _permit = self.throttle.acquire().await;
            request
                .send()
                .await
                .map_err(|e| RetrievalError::Transport(e.to_string()))?
        };
        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(RetrievalError::Auth(format!("embedding provider returned {status}")));
        }
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(RetrievalError::Transport(format!("embedding provider returned {status}: {body}")));
        }
        let body: EmbeddingResponse = response
            .json()
            .await
            .map_err(|e| RetrievalError::Malformed(e.to_string()))?;
        let vector = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| RetrievalError::Malformed("embedding response has no data".into()))?
            .embedding;
        if vector.len() != self.config.dim {
            return Err(RetrievalError::DimensionMismatch {
                record: None,
                expected: self.config.dim,
                found: vector.len(),
            });
        }
        Ok(vector)
    }
}
