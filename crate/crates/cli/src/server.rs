//! HTTP service: chat, classify, ingest, health and metrics endpoints.
//!
//! Engine calls are synchronous and run on the blocking pool. Ingestion
//! builds a new knowledge snapshot and swaps it in, so chat requests in
//! flight keep the snapshot they started with.

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::anyhow;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use darja_core::config::EngineConfig;
use darja_core::ingest::{ChunkerConfig, DocFormat, IngestError, SourceDocument};
use darja_core::router::{Engine, TurnError};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::metrics::Metrics;
use crate::{app, CliError};

pub const ENDPOINTS: [&str; 5] = ["/v1/chat", "/v1/classify", "/v1/ingest", "/v1/healthz", "/v1/metrics"];

pub struct AppState {
    pub engine: Arc<Engine>,
    pub metrics: Metrics,
    pub chunker: ChunkerConfig,
    /// Where each new snapshot is saved after ingestion, if anywhere.
    pub persist_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(engine: Engine, chunker: ChunkerConfig, persist_dir: Option<PathBuf>) -> Self {
        Self {
            engine: Arc::new(engine),
            metrics: Metrics::new(),
            chunker,
            persist_dir,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub session_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub reply: String,
    /// `"nlu"` or `"rag"`.
    pub route: String,
    pub intent: Option<String>,
    pub confidence: f64,
    pub sources: Vec<String>,
    pub latency_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub intent: String,
    pub confidence: f64,
    pub script: String,
    pub normalized: String,
    /// Path the router would take for this text.
    pub route: String,
}

/// Either a server-side `path`, or inline `text` under `doc_id`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestRequest {
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub doc_id: Option<String>,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
    /// `"markdown"` (default) or `"plain"`.
    #[serde(default)]
    pub format: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub doc_id: String,
    pub chunks: usize,
    pub total_chunks: usize,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request("invalid_body", e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

async fn chat(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<ChatRequest>, JsonRejection>,
) -> Result<Json<ChatResponse>, ApiError> {
    let req = body(payload)?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("empty_text", "text must not be empty"));
    }
    if req.session_id.trim().is_empty() {
        return Err(ApiError::bad_request("empty_session_id", "session_id must not be empty"));
    }
    let engine = state.engine.clone();
    let reply = blocking(move || engine.handle_turn(&req.session_id, &req.text)).await?.map_err(|e| match e {
        TurnError::EmptyText => ApiError::bad_request("empty_text", e.to_string()),
        TurnError::Classify(_) => ApiError::internal(e.to_string()),
    })?;
    state.metrics.record_route(reply.route.path.wire_name());
    state.metrics.record_stages(&reply.latencies);
    Ok(Json(ChatResponse {
        route: reply.route.path.wire_name().to_string(),
        intent: reply.route.intent.clone(),
        confidence: reply.route.confidence,
        sources: reply.sources,
        latency_ms: reply.latencies.0,
        reply: reply.text,
    }))
}

async fn classify(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<ClassifyRequest>, JsonRejection>,
) -> Result<Json<ClassifyResponse>, ApiError> {
    let req = body(payload)?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("empty_text", "text must not be empty"));
    }
    let engine = state.engine.clone();
    let classified = blocking(move || engine.classifier().classify(&req.text))
        .await?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let config = state.engine.config();
    let decision = darja_core::router::route(&classified, config.tau, &config.knowledge_intents);
    Ok(Json(ClassifyResponse {
        intent: classified.intent,
        confidence: classified.prediction.confidence,
        script: classified.normalized.script.as_str().to_string(),
        normalized: classified.normalized.text,
        route: decision.path.wire_name().to_string(),
    }))
}

fn ingest_document(req: IngestRequest) -> Result<SourceDocument, ApiError> {
    match (&req.path, &req.text) {
        (Some(path), None) => {
            let mut doc = SourceDocument::from_path(path).map_err(|e| ApiError::bad_request("unreadable_document", e.to_string()))?;
            if let Some(id) = req.doc_id {
                doc.id = id;
            }
            Ok(doc)
        }
        (None, Some(text)) => {
            let id = req
                .doc_id
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| ApiError::bad_request("missing_doc_id", "inline text needs a doc_id"))?;
            let format = match req.format.as_deref().unwrap_or("markdown") {
                "markdown" | "md" => DocFormat::Markdown,
                "plain" | "text" => DocFormat::Plain,
                other => return Err(ApiError::bad_request("bad_format", format!("unknown format {other:?}"))),
            };
            let title = req.title.unwrap_or_else(|| id.clone());
            Ok(SourceDocument::new(id, title, text.clone(), format))
        }
        _ => Err(ApiError::bad_request("bad_ingest_request", "give exactly one of path or text")),
    }
}

async fn ingest(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<IngestRequest>, JsonRejection>,
) -> Result<Json<IngestResponse>, ApiError> {
    let doc = ingest_document(body(payload)?)?;
    let worker = state.clone();
    blocking(move || {
        let engine = &worker.engine;
        let count = engine
            .knowledge()
            .ingest(&doc, &worker.chunker, engine.embedder().as_ref())
            .map_err(|e| match e {
                IngestError::EmptyDocument(_) => ApiError::bad_request("empty_document", e.to_string()),
                IngestError::Embed(_) => ApiError::new(StatusCode::BAD_GATEWAY, "provider_error", e.to_string()),
                other => ApiError::internal(other.to_string()),
            })?;
        let snapshot = engine.knowledge().snapshot();
        if let Some(dir) = &worker.persist_dir {
            if let Err(e) = snapshot.save(dir) {
                log::warn!("ingested {} but could not save the index: {e}", doc.id);
            }
        }
        Ok(Json(IngestResponse {
            doc_id: doc.id.clone(),
            chunks: count,
            total_chunks: snapshot.len(),
            doc_ids: snapshot.doc_ids().into_iter().map(str::to_string).collect(),
        }))
    })
    .await?
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn metrics(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "text/plain; version=0.0.4")], state.metrics.render())
}

async fn not_found(req: Request) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no endpoint at {}", req.uri().path()))
}

async fn method_not_allowed(req: Request) -> ApiError {
    ApiError::new(
        StatusCode::METHOD_NOT_ALLOWED,
        "method_not_allowed",
        format!("{} is not allowed on {}", req.method(), req.uri().path()),
    )
}

async fn count_requests(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let path = req.uri().path();
    let endpoint = ENDPOINTS.iter().find(|e| **e == path).copied().unwrap_or("other");
    let started = Instant::now();
    let response = next.run(req).await;
    state.metrics.record_request(endpoint, response.status().as_u16());
    log::debug!("{endpoint} {} in {:.1} ms", response.status(), started.elapsed().as_secs_f64() * 1e3);
    response
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/chat", post(chat))
        .route("/v1/classify", post(classify))
        .route("/v1/ingest", post(ingest))
        .route("/v1/healthz", get(healthz))
        .route("/v1/metrics", get(metrics))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(middleware::from_fn_with_state(state.clone(), count_requests))
        .with_state(state)
}

pub async fn serve_on(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// A server running on its own runtime thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown_and_join()
    }

    fn shutdown_and_join(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.shutdown_and_join();
    }
}

/// Bind `addr` and serve in a background thread until stopped.
pub fn spawn(state: Arc<AppState>, addr: &str) -> std::io::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let listener = runtime.block_on(TcpListener::bind(addr))?;
    let local = listener.local_addr()?;
    let (tx, rx) = oneshot::channel();
    let thread = std::thread::spawn(move || {
        runtime.block_on(serve_on(listener, state, async {
            let _ = rx.await;
        }))
    });
    Ok(ServerHandle {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Load the engine from `config`, bind and serve until interrupted.
pub fn run(config: &EngineConfig) -> Result<(), CliError> {
    let engine = app::build_engine(config)?;
    let state = Arc::new(AppState::new(engine, config.chunker_config(), Some(config.index_dir.clone())));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::runtime)?;
    let addr = format!("{}:{}", config.bind, config.port);
    runtime.block_on(async move {
        let listener = TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::runtime(anyhow!("cannot bind {addr}: {e}")))?;
        log::info!("listening on http://{}", listener.local_addr().map_err(CliError::runtime)?);
        serve_on(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
        .map_err(CliError::runtime)
    })
}
