//! In-process completion server for client tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use freqgap_core::tasks::{build_fewshot_prompts, parse_rendered, BundleRecord, TaskId, TaskInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Clone, Copy, Debug)]
pub enum Mode {
    /// Answer every arithmetic question correctly.
    Answer,
    /// Reply with this status to everything.
    Status(u16),
    /// 200 with a body that is not a completion.
    Garbage,
    /// The first request for each prompt hangs this long; later ones answer.
    SlowFirst(u64),
}

pub struct Stub {
    pub mode: Mode,
    /// Share of requests turned away with 503 or 429.
    pub fail_rate: f64,
    pub delay_ms: u64,
    rng: Mutex<ChaCha8Rng>,
    in_flight: AtomicUsize,
    pub peak: AtomicUsize,
    pub requests: AtomicUsize,
    pub failures_sent: AtomicUsize,
    pub bodies: Mutex<Vec<Value>>,
    pub auth: Mutex<Vec<Option<String>>>,
    per_prompt: Mutex<HashMap<String, usize>>,
}

impl Stub {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            fail_rate: 0.0,
            delay_ms: 0,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(99)),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            requests: AtomicUsize::new(0),
            failures_sent: AtomicUsize::new(0),
            bodies: Mutex::new(Vec::new()),
            auth: Mutex::new(Vec::new()),
            per_prompt: Mutex::new(HashMap::new()),
        }
    }

    pub fn flaky(fail_rate: f64, delay_ms: u64) -> Self {
        Self { fail_rate, delay_ms, ..Self::new(Mode::Answer) }
    }
}

fn answer(prompt: &str) -> Option<u64> {
    let q = parse_rendered(prompt.rsplit('\n').next()?)?;
    let x2: u64 = q.x2.parse().ok()?;
    match q.operator.as_str() {
        "times" => Some(q.x1 as u64 * x2),
        "plus" => Some(q.x1 as u64 + x2),
        _ => None,
    }
}

async fn handle(State(stub): State<Arc<Stub>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    stub.requests.fetch_add(1, Ordering::SeqCst);
    let now = stub.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stub.peak.fetch_max(now, Ordering::SeqCst);
    let response = respond(&stub, &headers, body).await;
    stub.in_flight.fetch_sub(1, Ordering::SeqCst);
    response
}

async fn respond(stub: &Stub, headers: &HeaderMap, body: Value) -> Response {
    let prompt = body["prompt"].as_str().unwrap_or_default().to_string();
    stub.auth.lock().unwrap().push(headers.get("authorization").map(|v| v.to_str().unwrap().to_string()));
    stub.bodies.lock().unwrap().push(body);
    if stub.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(stub.delay_ms)).await;
    }
    let roll: f64 = stub.rng.lock().unwrap().random();
    if roll < stub.fail_rate {
        stub.failures_sent.fetch_add(1, Ordering::SeqCst);
        let status = if roll < stub.fail_rate / 2.0 { StatusCode::SERVICE_UNAVAILABLE } else { StatusCode::TOO_MANY_REQUESTS };
        return status.into_response();
    }
    match stub.mode {
        Mode::Status(code) => StatusCode::from_u16(code).unwrap().into_response(),
        Mode::Garbage => Json(json!({ "id": "x", "choices": [] })).into_response(),
        Mode::SlowFirst(ms) => {
            let seen = {
                let mut map = stub.per_prompt.lock().unwrap();
                let n = map.entry(prompt.clone()).or_insert(0);
                *n += 1;
                *n
            };
            if seen == 1 {
                tokio::time::sleep(Duration::from_millis(ms)).await;
            }
            completion(&prompt)
        }
        Mode::Answer => completion(&prompt),
    }
}

fn completion(prompt: &str) -> Response {
    let text = match answer(prompt) {
        Some(y) => format!(" {y}\nQ: What is 1 plus 1? A: 2"),
        None => " unknown".to_string(),
    };
    Json(json!({ "choices": [{ "text": text }] })).into_response()
}

/// Starts the server on its own thread and returns its base URL.
pub fn serve(stub: Arc<Stub>) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            let app = Router::new().route("/v1/completions", post(handle)).with_state(stub);
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{addr}")
}

/// A port nothing listens on.
pub fn dead_url() -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}

/// `n` two-shot multiplication bundles.
pub fn mult_bundles(n: usize) -> Vec<BundleRecord> {
    let data: Vec<TaskInstance> = (0..n as u32 + 2)
        .map(|i| TaskInstance::arithmetic(TaskId::Mult, i % 100, i / 100 + 1).unwrap())
        .collect();
    build_fewshot_prompts(&data, 2, 5).unwrap().iter().map(|b| b.record()).collect()
}
