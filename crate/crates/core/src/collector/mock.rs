//! Local chat-completion server with scripted replies, for tests and demos.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// What the handler saw for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRequest {
    pub model: String,
    pub prompt: String,
    pub image_url: Option<String>,
    /// 1-based count of requests so far with this (model, prompt, image).
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    Status(u16),
    /// A 200 response whose body is not JSON.
    Garbage,
}

pub type Script = dyn Fn(&MockRequest) -> MockReply + Send + Sync;

/// 64-bit FNV-1a, used to derive stable pseudo-scores from prompts.
pub fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in part.as_bytes().iter().chain(std::iter::once(&0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// The default script: captions for generation prompts, a stable score in
/// the reference response format for evaluation prompts.
pub fn deterministic_reply(req: &MockRequest) -> MockReply {
    let h = fnv1a(&[&req.model, &req.prompt, req.image_url.as_deref().unwrap_or("")]);
    if req.prompt.contains("Generated captions:") {
        let score = h % 101;
        MockReply::Text(format!(
            "The caption covers the main objects but misses some detail.\nThe final score is ${score}$."
        ))
    } else {
        MockReply::Text(format!("A scene described by {} (variant {:04x}).", req.model, h & 0xffff))
    }
}

#[derive(Default)]
struct Log {
    attempts: HashMap<(String, String, Option<String>), u32>,
    requests: Vec<(Instant, MockRequest)>,
}

struct Shared {
    script: Box<Script>,
    log: Mutex<Log>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

fn prompt_of(body: &Value) -> (String, Option<String>) {
    let content = body.pointer("/messages/0/content");
    match content {
        Some(Value::String(s)) => (s.clone(), None),
        Some(Value::Array(parts)) => {
            let text = parts
                .iter()
                .filter(|p| p["type"] == "text")
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join("");
            let image = parts
                .iter()
                .find(|p| p["type"] == "image_url")
                .and_then(|p| p.pointer("/image_url/url"))
                .and_then(Value::as_str)
                .map(str::to_string);
            (text, image)
        }
        _ => (String::new(), None),
    }
}

async fn handle(State(shared): State<Arc<Shared>>, body: Bytes) -> Response {
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    let resp = respond(&shared, &body);
    // Hold the slot briefly so overlapping requests are observable.
    tokio::time::sleep(std::time::Duration::from_millis(2)).await;
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    resp
}

fn respond(shared: &Shared, body: &[u8]) -> Response {
    let Ok(value) = serde_json::from_slice::<Value>(body) else {
        return (StatusCode::BAD_REQUEST, "invalid JSON").into_response();
    };
    let model = value["model"].as_str().unwrap_or_default().to_string();
    let (prompt, image_url) = prompt_of(&value);
    let req = {
        let mut log = shared.log.lock().expect("mock log poisoned");
        let n = log.attempts.entry((model.clone(), prompt.clone(), image_url.clone())).or_insert(0);
        *n += 1;
        let req = MockRequest { model, prompt, image_url, attempt: *n };
        log.requests.push((Instant::now(), req.clone()));
        req
    };
    match (shared.script)(&req) {
        MockReply::Text(text) => axum::Json(json!({
            "id": "mock",
            "object": "chat.completion",
            "model": req.model,
            "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        }))
        .into_response(),
        MockReply::Status(code) => {
            let code = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (code, "scripted failure").into_response()
        }
        MockReply::Garbage => (StatusCode::OK, "<html>oops</html>").into_response(),
    }
}

/// A running mock server; shuts down when dropped.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(script: impl Fn(&MockRequest) -> MockReply + Send + Sync + 'static) -> Result<Self> {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").map_err(|e| Error::Transport(e.to_string()))?;
        listener.set_nonblocking(true).map_err(|e| Error::Transport(e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| Error::Transport(e.to_string()))?;
        let shared = Arc::new(Shared {
            script: Box::new(script),
            log: Mutex::new(Log::default()),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        });
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = Router::new()
            .route("/chat/completions", post(handle))
            .route("/v1/chat/completions", post(handle))
            .with_state(shared.clone());
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .expect("mock server");
            });
        });
        Ok(MockServer { addr, shared, shutdown: Some(tx), thread: Some(thread) })
    }

    /// A server running [`deterministic_reply`].
    pub fn deterministic() -> Result<Self> {
        Self::start(deterministic_reply)
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.shared.log.lock().expect("mock log poisoned").requests.len()
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        let log = self.shared.log.lock().expect("mock log poisoned");
        log.requests.iter().map(|(_, r)| r.clone()).collect()
    }

    /// Arrival times of requests for `model`, in arrival order.
    pub fn arrivals(&self, model: &str) -> Vec<Instant> {
        let log = self.shared.log.lock().expect("mock log poisoned");
        log.requests.iter().filter(|(_, r)| r.model == model).map(|(t, _)| *t).collect()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.shared.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
