//! In-process `/v1` server backed by the toy backend.
#![allow(dead_code, clippy::result_large_err)]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use detox_core::backend::{BackendSuite, BaselineSpec, ToyBackend};
use detox_core::text::TokenText;
use serde_json::{json, Value};

#[derive(Clone)]
pub struct Fixture {
    pub api_version: String,
    pub attention: bool,
    pub gradient_saliency: bool,
    pub classify: bool,
    /// `fill_mask` answers 503 for any text containing this token.
    pub poison: Option<String>,
    /// Added to the reported saliency total.
    pub total_offset: f64,
    /// `classify` returns a malformed body.
    pub garbage_classify: bool,
}

impl Default for Fixture {
    fn default() -> Self {
        Self {
            api_version: "v1".into(),
            attention: true,
            gradient_saliency: true,
            classify: true,
            poison: None,
            total_offset: 0.0,
            garbage_classify: false,
        }
    }
}

struct Shared {
    fixture: Fixture,
    toy: ToyBackend,
    requests: AtomicUsize,
}

pub struct Server {
    pub url: String,
    shared: Arc<Shared>,
}

impl Server {
    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }
}

fn error(status: StatusCode, code: &str, message: &str) -> Response {
    (status, Json(json!({"error": {"code": code, "message": message}}))).into_response()
}

fn text(tokens: &[String]) -> Result<TokenText, Response> {
    TokenText::from_tokens(tokens.iter().cloned())
        .map_err(|e| error(StatusCode::BAD_REQUEST, "bad_request", &e.to_string()))
}

fn texts(body: &Value) -> Result<Vec<TokenText>, Response> {
    let raw: Vec<Vec<String>> = serde_json::from_value(body["texts"].clone())
        .map_err(|e| error(StatusCode::BAD_REQUEST, "bad_request", &e.to_string()))?;
    raw.iter().map(|t| text(t)).collect()
}

fn tokens(body: &Value) -> Result<TokenText, Response> {
    let raw: Vec<String> = serde_json::from_value(body["tokens"].clone())
        .map_err(|e| error(StatusCode::BAD_REQUEST, "bad_request", &e.to_string()))?;
    text(&raw)
}

fn internal(e: detox_core::Error) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, "internal", &e.to_string())
}

type Reply = Result<Json<Value>, Response>;

async fn capabilities(State(s): State<Arc<Shared>>) -> Json<Value> {
    s.requests.fetch_add(1, Ordering::SeqCst);
    let f = &s.fixture;
    let mut caps = vec!["fill_mask", "embed", "perplexity"];
    if f.classify {
        caps.push("classify");
    }
    if f.gradient_saliency {
        caps.push("gradient_saliency");
    }
    if f.attention {
        caps.push("attention");
    }
    Json(json!({"api_version": f.api_version, "capabilities": caps}))
}

async fn classify(State(s): State<Arc<Shared>>, Json(body): Json<Value>) -> Reply {
    s.requests.fetch_add(1, Ordering::SeqCst);
    if s.fixture.garbage_classify {
        return Ok(Json(json!({"probs": "nope"})));
    }
    let probs: Vec<Value> = texts(&body)?
        .iter()
        .map(|t| s.toy.classify(t).map(|p| json!([p.p_nontoxic, p.p_toxic])))
        .collect::<Result<_, _>>()
        .map_err(internal)?;
    Ok(Json(json!({ "probs": probs })))
}

async fn fill_mask(State(s): State<Arc<Shared>>, Json(body): Json<Value>) -> Reply {
    s.requests.fetch_add(1, Ordering::SeqCst);
    let t = tokens(&body)?;
    if let Some(p) = &s.fixture.poison {
        if t.tokens().contains(p) {
            return Err(error(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "model overloaded"));
        }
    }
    let position = body["position"].as_u64().unwrap_or(0) as usize;
    let k = body["top_k"].as_u64().unwrap_or(0) as usize;
    let mut candidates = s.toy.fill_mask(&t, position, k).map_err(internal)?;
    // Servers may echo the mask token; the client must drop it.
    candidates.push(detox_core::InfillCandidate { token: "[MASK]".into(), score: 0.99 });
    Ok(Json(json!({ "candidates": candidates })))
}

async fn embed(State(s): State<Arc<Shared>>, Json(body): Json<Value>) -> Reply {
    s.requests.fetch_add(1, Ordering::SeqCst);
    let vectors: Vec<Vec<f64>> =
        texts(&body)?.iter().map(|t| s.toy.embed(t)).collect::<Result<_, _>>().map_err(internal)?;
    Ok(Json(json!({ "vectors": vectors })))
}

async fn perplexity(State(s): State<Arc<Shared>>, Json(body): Json<Value>) -> Reply {
    s.requests.fetch_add(1, Ordering::SeqCst);
    let ppl: Vec<f64> =
        texts(&body)?.iter().map(|t| s.toy.perplexity(t)).collect::<Result<_, _>>().map_err(internal)?;
    Ok(Json(json!({ "ppl": ppl })))
}

async fn gradient_saliency(State(s): State<Arc<Shared>>, Json(body): Json<Value>) -> Reply {
    s.requests.fetch_add(1, Ordering::SeqCst);
    if !s.fixture.gradient_saliency {
        return Err(error(StatusCode::NOT_FOUND, "not_found", "gradient_saliency not loaded"));
    }
    let t = tokens(&body)?;
    let alpha = body["alpha"].as_f64().unwrap_or(1.0);
    let baseline = match &body["baseline"] {
        Value::String(m) if m == "mask" => BaselineSpec::Mask,
        other => BaselineSpec::Tokens(
            serde_json::from_value(other.clone())
                .map_err(|e| error(StatusCode::BAD_REQUEST, "bad_request", &e.to_string()))?,
        ),
    };
    let saliency = s.toy.gradient_saliency(&t, alpha, &baseline).map_err(internal)?;
    let total: f64 = saliency.iter().sum::<f64>() + s.fixture.total_offset;
    Ok(Json(json!({ "saliency": saliency, "total": total })))
}

async fn attention(State(s): State<Arc<Shared>>, Json(body): Json<Value>) -> Reply {
    s.requests.fetch_add(1, Ordering::SeqCst);
    if !s.fixture.attention {
        return Err(error(StatusCode::NOT_FOUND, "not_found", "attention not loaded"));
    }
    let heads = s.toy.attention_weights(&tokens(&body)?).map_err(internal)?;
    Ok(Json(json!({ "heads": heads })))
}

pub fn spawn(fixture: Fixture, toy: ToyBackend) -> Server {
    let shared = Arc::new(Shared { fixture, toy, requests: AtomicUsize::new(0) });
    let app = Router::new()
        .route("/v1/capabilities", get(capabilities))
        .route("/v1/classify", post(classify))
        .route("/v1/fill_mask", post(fill_mask))
        .route("/v1/embed", post(embed))
        .route("/v1/perplexity", post(perplexity))
        .route("/v1/gradient_saliency", post(gradient_saliency))
        .route("/v1/attention", post(attention))
        .with_state(shared.clone());
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    Server { url: format!("http://{addr}"), shared }
}

pub fn steering_server(fixture: Fixture) -> Server {
    spawn(fixture, ToyBackend::steering())
}
