use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{elapsed_ms, ChatRequest, ChatTransport, Completion, TransportFailure};

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct ResponseBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// OpenAI-compatible `POST {base_url}/chat/completions` with a single user
/// message carrying the prompt.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client builds");
        Self { client }
    }

    pub fn with_client(client: reqwest::Client) -> Self {
        Self { client }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

pub(crate) fn endpoint_url(base_url: &str, path: &str) -> String {
    format!("{}/{}", base_url.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[async_trait]
impl ChatTransport for HttpTransport {
    async fn send(
        &self,
        request: &ChatRequest,
        api_key: Option<&str>,
    ) -> Result<Completion, TransportFailure> {
        let body = RequestBody {
            model: &request.endpoint.model_id,
            messages: [Message {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            stop: &request.stop,
        };
        let mut builder = self
            .client
            .post(endpoint_url(&request.endpoint.base_url, "chat/completions"))
            .json(&body);
        if let Some(key) = api_key {
            builder = builder.bearer_auth(key);
        }

        let start = Instant::now();
        let response = builder
            .send()
            .await
            .map_err(|e| TransportFailure::Network(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| TransportFailure::Network(e.to_string()))?;
        let latency_ms = elapsed_ms(start);

        if !status.is_success() {
            return Err(TransportFailure::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: ResponseBody =
            serde_json::from_str(&text).map_err(|e| TransportFailure::Malformed(format!("{e}: {text}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportFailure::Malformed("response has no choices".into()))?;
        Ok(Completion {
            text: choice.message.content.unwrap_or_default(),
            usage: parsed.usage.map(|u| (u.prompt_tokens, u.completion_tokens)),
            latency_ms,
        })
    }
}
