//! Wire-level tests against in-process mock servers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use errr::gateway::{
    ChatRequest, Gateway, GatewayError, HttpTransport, LlmEndpoint, PriceTable, ResponseCache, RetryPolicy, Throttle,
};
use errr::retrieval::{
    ingest_corpus, CorpusRecord, DenseRetriever, Embedder, EmbeddingClient, EmbeddingProviderConfig, Retriever,
    WebSearchClient, WebSearchConfig,
};
use serde_json::{json, Value};

async fn serve(router: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    format!("http://{addr}")
}

#[derive(Default)]
struct ChatState {
    hits: AtomicUsize,
    fail_first: usize,
    fail_status: u16,
    omit_usage: bool,
    last_body: Mutex<Option<Value>>,
    last_auth: Mutex<Option<String>>,
}

async fn chat(State(state): State<Arc<ChatState>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let n = state.hits.fetch_add(1, Ordering::SeqCst);
    *state.last_body.lock().unwrap() = Some(body.clone());
    *state.last_auth.lock().unwrap() = headers
        .get("authorization")
        .map(|v| v.to_str().unwrap().to_owned());
    if n < state.fail_first {
        return (
            StatusCode::from_u16(state.fail_status).unwrap(),
            Json(json!({"error": {"message": "try later"}})),
        );
    }
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
    let mut reply = json!({
        "id": "cmpl-1",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": format!("echo: {prompt}")}, "finish_reason": "stop"}],
    });
    if !state.omit_usage {
        reply["usage"] = json!({"prompt_tokens": 11, "completion_tokens": 4, "total_tokens": 15});
    }
    (StatusCode::OK, Json(reply))
}

async fn chat_server(state: Arc<ChatState>) -> String {
    serve(Router::new().route("/v1/chat/completions", post(chat)).with_state(state)).await + "/v1"
}

fn endpoint(base_url: String, key_env: Option<&str>) -> Arc<LlmEndpoint> {
    Arc::new(LlmEndpoint {
        name: "mock-chat".into(),
        base_url,
        model_id: "mock-model".into(),
        api_key_env: key_env.map(str::to_owned),
        price: PriceTable::new(1e-6, 2e-6).unwrap(),
    })
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff: Duration::from_millis(5),
    }
}

#[tokio::test]
async fn chat_completion_round_trip_and_cache() {
    let state = Arc::new(ChatState::default());
    let base = chat_server(Arc::clone(&state)).await;
    std::env::set_var("ERRR_HTTP_TEST_KEY", "sk-test");
    let cache_dir = tempfile::tempdir().unwrap();
    let gateway = Gateway::new(Arc::new(HttpTransport::default()))
        .with_cache(ResponseCache::new(cache_dir.path()))
        .with_retry(fast_retry());
    let mut request = ChatRequest::new(endpoint(base, Some("ERRR_HTTP_TEST_KEY")), "hello there");
    request.max_tokens = 32;

    let first = gateway.complete(&request).await.unwrap();
    assert_eq!(first.text, "echo: hello there");
    assert_eq!((first.usage.prompt_tokens, first.usage.completion_tokens), (11, 4));
    assert!((first.usage.cost_usd - (11.0 * 1e-6 + 4.0 * 2e-6)).abs() < 1e-15);
    assert!(!first.cached && !first.approximate_usage);

    let body = state.last_body.lock().unwrap().clone().unwrap();
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["messages"], json!([{"role": "user", "content": "hello there"}]));
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 32);
    assert!(body.get("stop").is_none());
    assert_eq!(state.last_auth.lock().unwrap().as_deref(), Some("Bearer sk-test"));

    let second = gateway.complete(&request).await.unwrap();
    assert!(second.cached);
    assert_eq!(second.text, first.text);
    assert_eq!(second.usage.cost_usd, 0.0);
    assert_eq!(state.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn transient_statuses_are_retried() {
    let state = Arc::new(ChatState {
        fail_first: 2,
        fail_status: 429,
        ..Default::default()
    });
    let base = chat_server(Arc::clone(&state)).await;
    let gateway = Gateway::new(Arc::new(HttpTransport::default())).with_retry(fast_retry());
    let response = gateway.complete(&ChatRequest::new(endpoint(base, None), "q")).await.unwrap();
    assert_eq!(response.text, "echo: q");
    assert_eq!(state.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn persistent_server_errors_exhaust_retries() {
    let state = Arc::new(ChatState {
        fail_first: usize::MAX,
        fail_status: 503,
        ..Default::default()
    });
    let base = chat_server(Arc::clone(&state)).await;
    let gateway = Gateway::new(Arc::new(HttpTransport::default())).with_retry(fast_retry());
    let err = gateway.complete(&ChatRequest::new(endpoint(base, None), "q")).await.unwrap_err();
    assert!(matches!(err, GatewayError::Provider { status: 503, .. }), "{err:?}");
    assert_eq!(state.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn unauthorized_is_not_retried() {
    let state = Arc::new(ChatState {
        fail_first: usize::MAX,
        fail_status: 401,
        ..Default::default()
    });
    let base = chat_server(Arc::clone(&state)).await;
    let gateway = Gateway::new(Arc::new(HttpTransport::default())).with_retry(fast_retry());
    let err = gateway.complete(&ChatRequest::new(endpoint(base, None), "q")).await.unwrap_err();
    assert!(matches!(err, GatewayError::Auth(_)), "{err:?}");
    assert_eq!(state.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn missing_usage_is_counted_locally() {
    let state = Arc::new(ChatState {
        omit_usage: true,
        ..Default::default()
    });
    let base = chat_server(state).await;
    let gateway = Gateway::new(Arc::new(HttpTransport::default()));
    let response = gateway.complete(&ChatRequest::new(endpoint(base, None), "one two")).await.unwrap();
    assert!(response.approximate_usage);
    // "one two" -> 2 tokens; "echo: one two" -> echo, :, one, two
    assert_eq!((response.usage.prompt_tokens, response.usage.completion_tokens), (2, 4));
}

#[tokio::test]
async fn unreachable_endpoint_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let gateway = Gateway::new(Arc::new(HttpTransport::default())).with_retry(fast_retry());
    let err = gateway.complete(&ChatRequest::new(endpoint(base, None), "q")).await.unwrap_err();
    assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }), "{err:?}");
}

#[derive(serde::Deserialize)]
struct SearchParams {
    q: String,
    count: usize,
}

async fn search(headers: HeaderMap, Query(params): Query<SearchParams>) -> (StatusCode, Json<Value>) {
    if headers.get("x-subscription-token").map(|v| v.to_str().unwrap()) != Some("search-key") {
        return (StatusCode::UNAUTHORIZED, Json(json!({})));
    }
    let results: Vec<Value> = (0..params.count + 2)
        .map(|i| {
            json!({
                "title": format!("Result {i} for {}", params.q),
                "url": format!("https://example.org/{}/{i}", params.q.replace(' ', "-")),
                "description": format!("Snippet {i} about {}.", params.q),
            })
        })
        .collect();
    (StatusCode::OK, Json(json!({"type": "search", "web": {"results": results}})))
}

#[tokio::test]
async fn web_search_client_speaks_the_search_api() {
    let base = serve(Router::new().route("/res/v1/web/search", get(search))).await;
    std::env::set_var("ERRR_HTTP_TEST_SEARCH_KEY", "search-key");
    std::env::set_var("ERRR_HTTP_TEST_BAD_SEARCH_KEY", "wrong");
    let config = |var: &str| WebSearchConfig {
        base_url: format!("{base}/res/v1/web/search"),
        api_key_env: var.into(),
        result_count: 5,
        key_header: "X-Subscription-Token".into(),
    };
    let client = WebSearchClient::new(config("ERRR_HTTP_TEST_SEARCH_KEY"), Throttle::new(2)).unwrap();
    let found = client.web_search("steve carell", 3).await.unwrap();
    let ids: Vec<_> = found.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(
        ids,
        [
            "https://example.org/steve-carell/0",
            "https://example.org/steve-carell/1",
            "https://example.org/steve-carell/2"
        ]
    );
    assert_eq!(found[0].title.as_deref(), Some("Result 0 for steve carell"));
    assert_eq!(found[1].text, "Snippet 1 about steve carell.");
    assert!(found.windows(2).all(|w| w[0].score > w[1].score));

    let ranked = client.retrieve("steve carell", 2).await.unwrap();
    assert_eq!(ranked.passages.len(), 2);

    let bad = WebSearchClient::new(config("ERRR_HTTP_TEST_BAD_SEARCH_KEY"), Throttle::new(2)).unwrap();
    assert!(matches!(
        bad.web_search("x", 3).await,
        Err(errr::retrieval::RetrievalError::Auth(_))
    ));
}

/// Embeds text as a 4-dim bag of character classes.
fn toy_embedding(text: &str) -> Vec<f32> {
    let mut v = [0f32; 4];
    for c in text.chars() {
        let slot = match c {
            'a'..='g' => 0,
            'h'..='n' => 1,
            'o'..='u' => 2,
            _ => 3,
        };
        v[slot] += 1.0;
    }
    v.to_vec()
}

async fn embeddings(Json(body): Json<Value>) -> Json<Value> {
    let input = body["input"].as_str().unwrap();
    Json(json!({
        "object": "list",
        "model": body["model"],
        "data": [{"object": "embedding", "index": 0, "embedding": toy_embedding(input)}],
    }))
}

#[tokio::test]
async fn dense_retriever_over_http_embeddings() {
    let base = serve(Router::new().route("/v1/embeddings", post(embeddings))).await + "/v1";
    let texts = ["abc abc abc", "hij hij", "opq opq opq opq", "xyz 123"];
    let records = texts.iter().enumerate().map(|(i, t)| {
        Ok(CorpusRecord {
            id: format!("d{i}"),
            title: None,
            text: (*t).into(),
            embedding: toy_embedding(t),
        })
    });
    let index = Arc::new(ingest_corpus(records, Some(4)).unwrap());
    let client = EmbeddingClient::new(
        EmbeddingProviderConfig {
            base_url: base.clone(),
            model_id: "toy".into(),
            dim: 4,
            api_key_env: None,
        },
        Throttle::new(2),
    );
    let retriever = DenseRetriever::new(index, Arc::new(client));
    let ranked = retriever.retrieve("opq opq opq opq", 2).await.unwrap();
    assert_eq!(ranked.passages[0].id, "d2");
    assert_eq!(ranked.passages[0].score, 0.0);
    // k beyond N is clamped.
    assert_eq!(retriever.retrieve("abc", 10).await.unwrap().passages.len(), 4);

    let wrong_dim = EmbeddingClient::new(
        EmbeddingProviderConfig {
            base_url: base,
            model_id: "toy".into(),
            dim: 8,
            api_key_env: None,
        },
        Throttle::new(1),
    );
    assert!(matches!(
        wrong_dim.embed("abc").await,
        Err(errr::retrieval::RetrievalError::DimensionMismatch { expected: 8, found: 4, .. })
    ));
}
