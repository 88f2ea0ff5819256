//! Scripted OpenAI-compatible endpoint for tests and dry runs.
//!
//! The mock listens on a loopback port and answers
//! `POST /chat/completions`, either from an ordered script or from a
//! responder closure that sees each request. Every request body is logged
//! with its arrival time so tests can assert on prompts and spacing.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::gateway::EndpointConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    /// 200 with this assistant text.
    Text(String),
    /// 200 with this text and `finish_reason: "length"`.
    Truncated(String),
    /// Bare HTTP status with an error body.
    Status(u16),
    /// Wait, then send the inner reply.
    Delay(Duration, Box<MockReply>),
}

impl MockReply {
    pub fn text(s: impl Into<String>) -> Self {
        MockReply::Text(s.into())
    }
}

impl From<&str> for MockReply {
    fn from(s: &str) -> Self {
        MockReply::Text(s.to_string())
    }
}

impl From<u16> for MockReply {
    fn from(code: u16) -> Self {
        MockReply::Status(code)
    }
}

/// One request as the mock received it.
#[derive(Debug, Clone)]
pub struct MockRequest {
    pub body: Value,
    pub authorization: Option<String>,
    /// Arrival time since the mock started.
    pub at: Duration,
}

impl MockRequest {
    pub fn messages(&self) -> &[Value] {
        self.body["messages"].as_array().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Text content of the last message, whether plain or in content parts.
    pub fn last_text(&self) -> String {
        self.messages().last().map(message_text).unwrap_or_default()
    }

    pub fn temperature(&self) -> Option<f64> {
        self.body["temperature"].as_f64()
    }

    pub fn seed(&self) -> Option<u64> {
        self.body["seed"].as_u64()
    }
}

fn message_text(m: &Value) -> String {
    match &m["content"] {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => String::new(),
    }
}

type Responder = dyn Fn(&MockRequest) -> MockReply + Send + Sync;

struct MockState {
    script: Mutex<VecDeque<MockReply>>,
    responder: Option<Box<Responder>>,
    log: Mutex<Vec<MockRequest>>,
    exhausted: AtomicBool,
    started: Instant,
}

/// Running mock endpoint; shuts down when dropped.
pub struct MockBackend {
    base_url: String,
    state: Arc<MockState>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl MockBackend {
    /// Serves `script` in order, one entry per request.
    ///
    /// # Panics
    /// If the script is empty.
    pub async fn scripted<I, R>(script: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<MockReply>,
    {
        let script: VecDeque<MockReply> = script.into_iter().map(Into::into).collect();
        assert!(!script.is_empty(), "mock script must not be empty");
        Self::start(script, None).await
    }

    /// Answers every request with `f(request)`.
    pub async fn with_responder<F>(f: F) -> Self
    where
        F: Fn(&MockRequest) -> MockReply + Send + Sync + 'static,
    {
        Self::start(VecDeque::new(), Some(Box::new(f))).await
    }

    async fn start(script: VecDeque<MockReply>, responder: Option<Box<Responder>>) -> Self {
        let state = Arc::new(MockState {
            script: Mutex::new(script),
            responder,
            log: Mutex::new(Vec::new()),
            exhausted: AtomicBool::new(false),
            started: Instant::now(),
        });
        let app = Router::new()
            .route("/chat/completions", post(handle))
            .route("/v1/chat/completions", post(handle))
            .with_state(state.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
            .await
            .expect("bind loopback port");
        let addr = listener.local_addr().expect("local addr");
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        MockBackend {
            base_url: format!("http://{addr}"),
            state,
            shutdown: Some(tx),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Endpoint settings pointing at this mock, with fast retries.
    pub fn endpoint(&self) -> EndpointConfig {
        let mut cfg = EndpointConfig::new(self.base_url.clone(), "mock-model");
        cfg.backoff_base_ms = 10;
        cfg.timeout_s = 10.0;
        cfg
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        self.state.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.log.lock().unwrap().len()
    }

    /// True once a request arrived after the script ran out.
    pub fn exhausted(&self) -> bool {
        self.state.exhausted.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.state.script.lock().unwrap().len()
    }
}

impl Drop for MockBackend {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

async fn handle(
    State(state): State<Arc<MockState>>,
    headers: axum::http::HeaderMap,
    Json(body): Json<Value>,
) -> Response {
    let request = MockRequest {
        body,
        authorization: headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
        at: state.started.elapsed(),
    };
    let reply = match &state.responder {
        Some(f) => Some(f(&request)),
        None => state.script.lock().unwrap().pop_front(),
    };
    state.log.lock().unwrap().push(request);
    let Some(mut reply) = reply else {
        state.exhausted.store(true, Ordering::SeqCst);
        return (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": {"message": "mock script exhausted"}})),
        )
            .into_response();
    };
    while let MockReply::Delay(d, inner) = reply {
        tokio::time::sleep(d).await;
        reply = *inner;
    }
    match reply {
        MockReply::Text(text) => completion(text, "stop"),
        MockReply::Truncated(text) => completion(text, "length"),
        MockReply::Status(code) => {
            let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (
                status,
                Json(json!({"error": {"message": format!("scripted status {code}")}})),
            )
                .into_response()
        }
        MockReply::Delay(..) => unreachable!(),
    }
}

fn completion(text: String, finish_reason: &str) -> Response {
    Json(json!({
        "id": "mock",
        "object": "chat.completion",
        "model": "mock-model",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": finish_reason,
        }],
    }))
    .into_response()
}
