//! The HTTP provider against a local stub server.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use kgcqr::providers::{ChatModel, ChatRequest, Embedder, OpenAiClient, ProviderConfig, ProviderError};
use serde_json::{json, Value};

#[derive(Clone, Copy)]
enum Behavior {
    /// Fail with 500 this many times, then succeed.
    FlakyThenOk(usize),
    Unauthorized,
    Slow(Duration),
}

#[derive(Clone)]
struct Stub {
    behavior: Behavior,
    calls: Arc<AtomicUsize>,
    last_body: Arc<Mutex<Option<Value>>>,
    last_auth: Arc<Mutex<Option<String>>>,
}

async fn chat(State(s): State<Stub>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let n = s.calls.fetch_add(1, Ordering::SeqCst);
    *s.last_body.lock().unwrap() = Some(body);
    *s.last_auth.lock().unwrap() = headers.get("authorization").map(|v| v.to_str().unwrap().to_string());
    match s.behavior {
        Behavior::FlakyThenOk(fails) if n < fails => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": "boom"}))),
        Behavior::Unauthorized => (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad key"}))),
        Behavior::Slow(d) => {
            tokio::time::sleep(d).await;
            (StatusCode::OK, Json(json!({"choices": [{"message": {"content": "late"}}]})))
        }
        _ => (StatusCode::OK, Json(json!({"choices": [{"message": {"role": "assistant", "content": "True"}}]}))),
    }
}

async fn embeddings(State(s): State<Stub>, Json(body): Json<Value>) -> Json<Value> {
    s.calls.fetch_add(1, Ordering::SeqCst);
    let n = body["input"].as_array().unwrap().len();
    // Answer in reverse order; the client must sort by index.
    let data: Vec<Value> = (0..n)
        .rev()
        .map(|i| {
            let mut v = vec![0.0; 4];
            v[i % 4] = 2.0;
            json!({"index": i, "embedding": v})
        })
        .collect();
    Json(json!({"data": data}))
}

fn serve(behavior: Behavior) -> (String, Stub) {
    let stub = Stub {
        behavior,
        calls: Arc::default(),
        last_body: Arc::default(),
        last_auth: Arc::default(),
    };
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/embeddings", post(embeddings))
        .with_state(stub.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    (format!("http://{addr}/v1"), stub)
}

fn config(base_url: String) -> ProviderConfig {
    ProviderConfig {
        base_url,
        model: "test-model".into(),
        embedding_model: Some("test-embed".into()),
        api_key: Some("sk-test".into()),
        timeout: Duration::from_secs(5),
        max_retries: 3,
        retry_base_delay: Duration::from_millis(5),
        embedding_dim: 4,
        embed_batch_size: 3,
        max_in_flight: 2,
    }
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, stub) = serve(Behavior::FlakyThenOk(2));
    let client = OpenAiClient::new(config(url)).unwrap();
    let mut req = ChatRequest::new("is this relevant?");
    req.system_prompt = "judge".into();
    assert_eq!(client.chat(&req).unwrap(), "True");
    assert_eq!(stub.calls.load(Ordering::SeqCst), 3);

    let body = stub.last_body.lock().unwrap().clone().unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 512);
    assert_eq!(body["messages"][0], json!({"role": "system", "content": "judge"}));
    assert_eq!(body["messages"][1], json!({"role": "user", "content": "is this relevant?"}));
    assert_eq!(stub.last_auth.lock().unwrap().as_deref(), Some("Bearer sk-test"));
}

#[test]
fn gives_up_after_max_retries() {
    let (url, stub) = serve(Behavior::FlakyThenOk(10));
    let client = OpenAiClient::new(ProviderConfig { max_retries: 2, ..config(url) }).unwrap();
    let err = client.chat(&ChatRequest::new("x")).unwrap_err();
    assert!(matches!(err, ProviderError::Status { status: 500, .. }), "{err:?}");
    assert_eq!(stub.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, stub) = serve(Behavior::Unauthorized);
    let client = OpenAiClient::new(config(url)).unwrap();
    let err = client.chat(&ChatRequest::new("x")).unwrap_err();
    assert!(matches!(err, ProviderError::Auth { status: 401 }), "{err:?}");
    assert_eq!(stub.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn slow_server_times_out() {
    let (url, _stub) = serve(Behavior::Slow(Duration::from_secs(3)));
    let cfg = ProviderConfig {
        timeout: Duration::from_millis(200),
        max_retries: 0,
        ..config(url)
    };
    let err = OpenAiClient::new(cfg).unwrap().chat(&ChatRequest::new("x")).unwrap_err();
    assert!(matches!(err, ProviderError::Timeout), "{err:?}");
}

#[test]
fn embeddings_are_batched_reordered_and_normalized() {
    let (url, stub) = serve(Behavior::FlakyThenOk(0));
    let client = OpenAiClient::new(config(url)).unwrap();
    let texts: Vec<String> = (0..5).map(|i| format!("t{i}")).collect();
    let out = client.embed(&texts).unwrap();
    assert_eq!(stub.calls.load(Ordering::SeqCst), 2);
    assert_eq!(out.len(), 5);
    for (i, v) in out.iter().enumerate() {
        let hot = if i < 3 { i } else { i - 3 };
        assert_eq!(v.values()[hot % 4], 1.0, "row {i}");
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let cfg = ProviderConfig {
        max_retries: 0,
        ..config("http://127.0.0.1:9/v1".into())
    };
    let err = OpenAiClient::new(cfg).unwrap().chat(&ChatRequest::new("x")).unwrap_err();
    assert!(matches!(err, ProviderError::Transport(_) | ProviderError::Timeout), "{err:?}");
}
