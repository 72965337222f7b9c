//! In-process scripted transport for tests and offline runs.

use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;

use super::{approximate_token_count, ChatRequest, ChatTransport, Completion, TransportFailure};

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedReply {
    pub text: String,
    pub report_usage: bool,
    pub latency_ms: f64,
}

impl ScriptedReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            report_usage: true,
            latency_ms: 0.0,
        }
    }

    /// Behave like a provider that leaves `usage` out of its response.
    pub fn without_usage(mut self) -> Self {
        self.report_usage = false;
        self
    }

    pub fn with_latency(mut self, latency_ms: f64) -> Self {
        self.latency_ms = latency_ms;
        self
    }
}

type Script = dyn Fn(&ChatRequest) -> Result<ScriptedReply, TransportFailure> + Send + Sync;

/// A [`ChatTransport`] whose replies come from a closure. When usage is
/// reported, token counts use [`approximate_token_count`] so they are
/// deterministic.
pub struct ScriptedTransport {
    script: Box<Script>,
    calls: AtomicUsize,
}

impl ScriptedTransport {
    pub fn new<F>(script: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<ScriptedReply, TransportFailure> + Send + Sync + 'static,
    {
        Self {
            script: Box::new(script),
            calls: AtomicUsize::new(0),
        }
    }

    /// Replies with the last whitespace-separated word of the prompt.
    pub fn echo() -> Self {
        Self::new(|req| {
            let last = req.prompt.split_whitespace().last().unwrap_or_default();
            Ok(ScriptedReply::text(last))
        })
    }

    /// Replies with the text of the first rule whose needle occurs in the
    /// prompt, or `fallback` when none matches.
    pub fn routes(rules: Vec<(String, String)>, fallback: impl Into<String>) -> Self {
        let fallback = fallback.into();
        Self::new(move |req| {
            let text = rules
                .iter()
                .find(|(needle, _)| req.prompt.contains(needle.as_str()))
                .map(|(_, reply)| reply.clone())
                .unwrap_or_else(|| fallback.clone());
            Ok(ScriptedReply::text(text))
        })
    }

    /// Fails with a network error `failures` times, then always replies `text`.
    pub fn failing_then(failures: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        let seen = AtomicUsize::new(0);
        Self::new(move |_| {
            if seen.fetch_add(1, Ordering::SeqCst) < failures {
                Err(TransportFailure::Network("connection reset".into()))
            } else {
                Ok(ScriptedReply::text(text.clone()))
            }
        })
    }

    /// Number of times the transport was invoked (cache hits never reach it).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatTransport for ScriptedTransport {
    async fn send(
        &self,
        request: &ChatRequest,
        _api_key: Option<&str>,
    ) -> Result<Completion, TransportFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let reply = (self.script)(request)?;
        let usage = reply.report_usage.then(|| {
            (
                approximate_token_count(&request.prompt),
                approximate_token_count(&reply.text),
            )
        });
        Ok(Completion {
            text: reply.text,
            usage,
            latency_ms: reply.latency_ms,
        })
    }
}
