//! Chat-completion gateway.
//!
//! A [`Gateway`] sends [`ChatRequest`]s to OpenAI-compatible endpoints (a
//! commercial API or a locally served student model) through a pluggable
//! [`ChatTransport`], caches every response on disk keyed by [`cache_key`],
//! retries transient failures, and accounts tokens, cost and latency for
//! every call.

mod cache;
pub(crate) mod http;
mod ledger;
pub mod mock;
mod tokens;

use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

pub use cache::{CacheRecord, ResponseCache};
pub use http::HttpTransport;
pub use ledger::UsageLedger;
pub use tokens::approximate_token_count;

/// Default number of concurrent outbound calls.
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
}

/// USD per token, for prompt and completion tokens separately.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub prompt_rate: f64,
    pub completion_rate: f64,
}

impl PriceTable {
    pub fn new(prompt_rate: f64, completion_rate: f64) -> Result<Self, GatewayError> {
        let price = Self {
            prompt_rate,
            completion_rate,
        };
        price.validate()?;
        Ok(price)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let ok = |r: f64| r.is_finite() && r >= 0.0;
        if ok(self.prompt_rate) && ok(self.completion_rate) {
            Ok(())
        } else {
            Err(GatewayError::InvalidRequest(format!(
                "price rates must be finite and non-negative, got {self:?}"
            )))
        }
    }
}

/// One chat-completion endpoint. The model behind it is opaque: its identity
/// is `(base_url, model_id)` and nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpoint {
    pub name: String,
    pub base_url: String,
    pub model_id: String,
    /// Environment variable holding the API key; `None` for keyless servers.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub price: PriceTable,
}

impl LlmEndpoint {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(format!(
                "endpoint '{}' has an empty model_id",
                self.name
            )));
        }
        if self.name.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("endpoint name is empty".into()));
        }
        self.price.validate()
    }

    /// Reads the API key from the configured variable. `Ok(None)` when the
    /// endpoint needs no key.
    pub fn api_key(&self) -> Result<Option<String>, GatewayError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(key) if !key.is_empty() => Ok(Some(key)),
                _ => Err(GatewayError::Auth(format!(
                    "environment variable {var} is not set for endpoint '{}'",
                    self.name
                ))),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub endpoint: Arc<LlmEndpoint>,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

impl ChatRequest {
    /// A request with temperature 0, 256 max tokens and no stop sequences.
    pub fn new(endpoint: Arc<LlmEndpoint>, prompt: impl Into<String>) -> Self {
        Self {
            endpoint,
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 256,
            stop: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        self.endpoint.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_usd: f64,
    pub latency_ms: f64,
}

impl UsageStats {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: &UsageStats) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.cost_usd += other.cost_usd;
        self.latency_ms += other.latency_ms;
    }
}

impl<'a> std::iter::Sum<&'a UsageStats> for UsageStats {
    fn sum<I: Iterator<Item = &'a UsageStats>>(iter: I) -> Self {
        iter.fold(UsageStats::default(), |mut acc, u| {
            acc.add(u);
            acc
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: UsageStats,
    pub cached: bool,
    /// Set when the provider omitted usage and tokens were counted locally.
    pub approximate_usage: bool,
}

pub fn estimate_cost(usage: &UsageStats, price: &PriceTable) -> f64 {
    usage.prompt_tokens as f64 * price.prompt_rate
        + usage.completion_tokens as f64 * price.completion_rate
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    model_id: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    stop: &'a [String],
}

/// Canonical JSON of the fields that determine a completion. Field order is
/// fixed by the struct declaration.
pub fn canonical_request(request: &ChatRequest) -> String {
    serde_json::to_string(&CanonicalRequest {
        model_id: &request.endpoint.model_id,
        prompt: &request.prompt,
        temperature: request.temperature,
        max_tokens: request.max_tokens,
        stop: &request.stop,
    })
    .expect("canonical request serializes")
}

/// SHA-256 of [`canonical_request`], hex encoded.
pub fn cache_key(request: &ChatRequest) -> String {
    hex::encode(Sha256::digest(canonical_request(request).as_bytes()))
}

/// What a transport hands back for one successful call.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// `(prompt_tokens, completion_tokens)` when the provider reports usage.
    pub usage: Option<(u64, u64)>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportFailure {
    /// Connection or timeout problems; retried.
    Network(String),
    /// Non-success HTTP status. 429 and 5xx are retried.
    Status { status: u16, body: String },
    /// The body could not be interpreted; not retried.
    Malformed(String),
}

impl TransportFailure {
    fn is_transient(&self) -> bool {
        match self {
            TransportFailure::Network(_) => true,
            TransportFailure::Status { status, .. } => *status == 429 || *status >= 500,
            TransportFailure::Malformed(_) => false,
        }
    }
}

#[async_trait]
pub trait ChatTransport: Send + Sync {
    async fn send(
        &self,
        request: &ChatRequest,
        api_key: Option<&str>,
    ) -> Result<Completion, TransportFailure>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

/// Shared bound on concurrent outbound calls (LLM and web search alike).
#[derive(Debug, Clone)]
pub struct Throttle(Arc<Semaphore>);

impl Throttle {
    pub fn new(permits: usize) -> Self {
        Self(Arc::new(Semaphore::new(permits.max(1))))
    }

    pub async fn acquire(&self) -> tokio::sync::SemaphorePermit<'_> {
        self.0.acquire().await.expect("throttle semaphore is never closed")
    }

    pub fn available(&self) -> usize {
        self.0.available_permits()
    }
}

impl Default for Throttle {
    fn default() -> Self {
        Self::new(DEFAULT_PARALLELISM)
    }
}

pub struct Gateway {
    transport: Arc<dyn ChatTransport>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    throttle: Throttle,
    ledger: Arc<UsageLedger>,
    charge_cached: bool,
}

impl Gateway {
    pub fn new(transport: Arc<dyn ChatTransport>) -> Self {
        Self {
            transport,
            cache: None,
            retry: RetryPolicy::default(),
            throttle: Throttle::default(),
            ledger: Arc::new(UsageLedger::default()),
            charge_cached: false,
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_throttle(mut self, throttle: Throttle) -> Self {
        self.throttle = throttle;
        self
    }

    pub fn with_ledger(mut self, ledger: Arc<UsageLedger>) -> Self {
        self.ledger = ledger;
        self
    }

    /// When set, cache hits are billed at the original call's cost instead of zero.
    pub fn charge_cached(mut self, charge: bool) -> Self {
        self.charge_cached = charge;
        self
    }

    pub fn throttle(&self) -> &Throttle {
        &self.throttle
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    pub async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let key = cache_key(request);

        if let Some(cache) = &self.cache {
            if let Some(record) = cache.get(&request.endpoint.name, &key).await? {
                // Lookup latency is reported as zero so warm re-runs are reproducible.
                let usage = UsageStats {
                    prompt_tokens: record.prompt_tokens,
                    completion_tokens: record.completion_tokens,
                    cost_usd: if self.charge_cached { record.cost_usd } else { 0.0 },
                    latency_ms: 0.0,
                };
                self.ledger.record(&request.endpoint.name, &usage, true);
                return Ok(ChatResponse {
                    text: record.text,
                    usage,
                    cached: true,
                    approximate_usage: record.approximate_usage,
                });
            }
        }

        let api_key = request.endpoint.api_key()?;
        let completion = self.send_with_retry(request, api_key.as_deref()).await?;

        let (prompt_tokens, completion_tokens, approximate_usage) = match completion.usage {
            Some((p, c)) => (p, c, false),
            None => (
                approximate_token_count(&request.prompt),
                approximate_token_count(&completion.text),
                true,
            ),
        };
        let mut usage = UsageStats {
            prompt_tokens,
            completion_tokens,
            cost_usd: 0.0,
            latency_ms: completion.latency_ms,
        };
        usage.cost_usd = estimate_cost(&usage, &request.endpoint.price);

        if let Some(cache) = &self.cache {
            let record = CacheRecord {
                request: canonical_request(request),
                text: completion.text.clone(),
                prompt_tokens,
                completion_tokens,
                approximate_usage,
                cost_usd: usage.cost_usd,
                latency_ms: usage.latency_ms,
            };
            cache.put(&request.endpoint.name, &key, &record).await?;
        }
        self.ledger.record(&request.endpoint.name, &usage, false);

        Ok(ChatResponse {
            text: completion.text,
            usage,
            cached: false,
            approximate_usage,
        })
    }

    async fn send_with_retry(
        &self,
        request: &ChatRequest,
        api_key: Option<&str>,
    ) -> Result<Completion, GatewayError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.throttle.acquire().await;
                self.transport.send(request, api_key).await
            };
            let failure = match result {
                Ok(completion) => return Ok(completion),
                Err(failure) => failure,
            };
            if failure.is_transient() && attempt < attempts {
                let wait = self.retry.backoff(attempt);
                tracing::warn!(
                    endpoint = %request.endpoint.name,
                    attempt,
                    ?failure,
                    "transient failure, retrying in {wait:?}"
                );
                tokio::time::sleep(wait).await;
                continue;
            }
            return Err(match failure {
                TransportFailure::Network(message) => GatewayError::Transport { attempts: attempt, message },
                TransportFailure::Status { status: 401 | 403, body } => GatewayError::Auth(body),
                TransportFailure::Status { status, body } => GatewayError::Provider { status, body },
                TransportFailure::Malformed(message) => GatewayError::Malformed(message),
            });
        }
    }
}

/// Wall-clock milliseconds since `start`.
pub(crate) fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}
