//! A local stand-in for the scoring and augmentation services.
//!
//! Requests are checked against the exact wire schema (field set, field
//! types, candidate token sequence, base64 image) and rejected with 400 on any
//! deviation. Responses are deterministic functions of the request. Faults can
//! be injected for the first N requests to exercise client retry paths.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use base64::Engine;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;

/// Misbehaviour applied to the first requests the server receives.
#[derive(Debug, Clone, Default)]
pub struct Faults {
    /// Sleep this long before answering the first `stall_first` requests.
    pub stall_first: usize,
    pub stall: Duration,
    /// Answer with 503.
    pub unavailable_first: usize,
    /// Answer with a body that is not JSON.
    pub malformed_first: usize,
    /// Answer /score with one score too few.
    pub wrong_length_first: usize,
    /// Delay every response.
    pub latency: Duration,
}

#[derive(Debug, Default)]
pub struct Counters {
    pub total: AtomicUsize,
    pub score: AtomicUsize,
    pub augment: AtomicUsize,
    pub rejected: AtomicUsize,
}

struct Shared {
    faults: Faults,
    counters: Counters,
    rejections: Mutex<Vec<String>>,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds an ephemeral localhost port and serves on a background thread.
    pub fn start(faults: Faults) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0".parse().unwrap(), faults)
    }

    pub fn bind(addr: SocketAddr, faults: Faults) -> std::io::Result<Self> {
        let shared = Arc::new(Shared {
            faults,
            counters: Counters::default(),
            rejections: Mutex::new(Vec::new()),
        });
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(shared.clone());
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .expect("server");
            });
        });
        Ok(Self {
            addr,
            shared,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn counters(&self) -> &Counters {
        &self.shared.counters
    }

    pub fn requests(&self) -> usize {
        self.shared.counters.total.load(Ordering::SeqCst)
    }

    /// Reasons for every rejected request so far.
    pub fn rejections(&self) -> Vec<String> {
        self.shared.rejections.lock().unwrap().clone()
    }

    /// Blocks until the server stops (never, unless shut down elsewhere).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
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

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/score", post(score))
        .route("/augment", post(augment))
        .with_state(shared)
}

enum Fault {
    None,
    Unavailable,
    Malformed,
    WrongLength,
}

async fn admit(shared: &Shared) -> Fault {
    let n = shared.counters.total.fetch_add(1, Ordering::SeqCst);
    let f = &shared.faults;
    if !f.latency.is_zero() {
        tokio::time::sleep(f.latency).await;
    }
    if n < f.stall_first {
        tokio::time::sleep(f.stall).await;
    }
    if n < f.unavailable_first {
        Fault::Unavailable
    } else if n < f.malformed_first {
        Fault::Malformed
    } else if n < f.wrong_length_first {
        Fault::WrongLength
    } else {
        Fault::None
    }
}

fn reject(shared: &Shared, reason: String) -> Response {
    shared.counters.rejected.fetch_add(1, Ordering::SeqCst);
    shared.rejections.lock().unwrap().push(reason.clone());
    (StatusCode::BAD_REQUEST, reason).into_response()
}

fn object_with_keys(body: &Bytes, keys: &[&str]) -> Result<Map<String, Value>, String> {
    let v: Value = serde_json::from_slice(body).map_err(|e| format!("body is not JSON: {e}"))?;
    let Value::Object(obj) = v else {
        return Err("body is not an object".into());
    };
    let mut got: Vec<&str> = obj.keys().map(String::as_str).collect();
    got.sort_unstable();
    let mut want = keys.to_vec();
    want.sort_unstable();
    if got != want {
        return Err(format!("fields {got:?}, expected {want:?}"));
    }
    Ok(obj)
}

fn string_field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a str, String> {
    obj[key].as_str().ok_or_else(|| format!("{key} is not a string"))
}

/// Deterministic pseudo-probability in (0, 1].
fn unit_hash(parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0xff]);
    }
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().unwrap()) >> 11;
    (x as f64 + 1.0) / (1u64 << 53) as f64
}

fn check_score_request(body: &Bytes) -> Result<(String, String, usize), String> {
    let obj = object_with_keys(body, &["query_id", "prompt_text", "image_png_b64", "candidate_tokens"])?;
    let query_id = string_field(&obj, "query_id")?.to_string();
    let prompt = string_field(&obj, "prompt_text")?.to_string();
    let image = string_field(&obj, "image_png_b64")?;
    if !image.is_empty() {
        let png = base64::engine::general_purpose::STANDARD
            .decode(image)
            .map_err(|e| format!("image_png_b64: {e}"))?;
        if !png.starts_with(b"\x89PNG\r\n\x1a\n") {
            return Err("image_png_b64 is not a PNG".into());
        }
    }
    let tokens = obj["candidate_tokens"].as_array().ok_or("candidate_tokens is not an array")?;
    if tokens.is_empty() {
        return Err("candidate_tokens is empty".into());
    }
    for (i, t) in tokens.iter().enumerate() {
        let want = format!("<I{}>", i + 1);
        if t.as_str() != Some(want.as_str()) {
            return Err(format!("candidate_tokens[{i}] = {t}, expected {want}"));
        }
        if !prompt.contains(&want) {
            return Err(format!("prompt does not mention {want}"));
        }
    }
    Ok((query_id, prompt, tokens.len()))
}

async fn score(State(shared): State<Arc<Shared>>, body: Bytes) -> Response {
    shared.counters.score.fetch_add(1, Ordering::SeqCst);
    let fault = admit(&shared).await;
    let (query_id, prompt, n) = match check_score_request(&body) {
        Ok(v) => v,
        Err(reason) => return reject(&shared, reason),
    };
    let n = match fault {
        Fault::Unavailable => return StatusCode::SERVICE_UNAVAILABLE.into_response(),
        Fault::Malformed => return (StatusCode::OK, "{\"query_id\": ").into_response(),
        Fault::WrongLength => n - 1,
        Fault::None => n,
    };
    let raw: Vec<f64> = (1..=n)
        .map(|k| unit_hash(&[&query_id, &prompt, &format!("<I{k}>")]))
        .collect();
    let total: f64 = raw.iter().sum();
    let scores: Vec<f64> = raw.iter().map(|x| x / total).collect();
    axum::Json(json!({ "query_id": query_id, "scores": scores })).into_response()
}

fn check_augment_request(body: &Bytes) -> Result<(String, String), String> {
    let obj = object_with_keys(body, &["image_ref", "task", "prompt_text"])?;
    let image_ref = string_field(&obj, "image_ref")?.to_string();
    let task = string_field(&obj, "task")?.to_string();
    if task != "caption" && task != "aspects" {
        return Err(format!("task {task:?} is neither caption nor aspects"));
    }
    string_field(&obj, "prompt_text")?;
    Ok((image_ref, task))
}

const ASPECT_WORDS: &[&str] = &[
    "arches", "neon", "stained glass", "latte art", "brick", "murals", "garden", "lanterns", "marble", "vinyl",
    "skyline", "pastries", "fountains", "wood beams", "sculptures", "tiles",
];

async fn augment(State(shared): State<Arc<Shared>>, body: Bytes) -> Response {
    shared.counters.augment.fetch_add(1, Ordering::SeqCst);
    let fault = admit(&shared).await;
    let (image_ref, task) = match check_augment_request(&body) {
        Ok(v) => v,
        Err(reason) => return reject(&shared, reason),
    };
    match fault {
        Fault::Unavailable => return StatusCode::SERVICE_UNAVAILABLE.into_response(),
        Fault::Malformed => return (StatusCode::OK, "not json").into_response(),
        _ => {}
    }
    let pick = |salt: &str| {
        let i = (unit_hash(&[&image_ref, salt]) * ASPECT_WORDS.len() as f64) as usize;
        ASPECT_WORDS[i.min(ASPECT_WORDS.len() - 1)]
    };
    let output_text = if task == "caption" {
        let stem = image_ref.rsplit('/').next().unwrap_or(&image_ref);
        format!("A photo ({stem}) showing {} and {}.", pick("c1"), pick("c2"))
    } else {
        let mut words = vec![pick("a1"), pick("a2"), pick("a3")];
        words.dedup();
        words.join(", ")
    };
    axum::Json(json!({ "output_text": output_text })).into_response()
}
