//! HTTP service exposing the coding pipeline as two logical endpoint
//! groups in one binary: mention detection (`POST /extract`) and code
//! assignment (`POST /link`), plus the combined `POST /code` and a
//! `GET /health` manifest probe. Requests return 503 until the index has
//! finished loading, 400 on malformed JSON, and 422 when a mention
//! normalizes to nothing.

use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use medlinker_core::{
    CodeCandidate, CodingEngine, CodingResult, IndexError, Manifest, MentionSpan, PipelineError,
    Referral,
};

/// Shared service state: empty until the index load completes.
#[derive(Clone, Default)]
pub struct AppState {
    engine: Arc<RwLock<Option<Arc<CodingEngine>>>>,
}

impl AppState {
    pub fn empty() -> Self {
        AppState::default()
    }

    pub fn with_engine(engine: CodingEngine) -> Self {
        let state = AppState::default();
        state.install(engine);
        state
    }

    pub fn install(&self, engine: CodingEngine) {
        *self.engine.write().expect("state lock") = Some(Arc::new(engine));
    }

    fn engine(&self) -> Result<Arc<CodingEngine>, ServiceError> {
        self.engine
            .read()
            .expect("state lock")
            .clone()
            .ok_or(ServiceError::NotReady)
    }
}

enum ServiceError {
    NotReady,
    EmptyMention,
    Internal(String),
}

impl From<PipelineError> for ServiceError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Index(IndexError::EmptyMention) => ServiceError::EmptyMention,
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ServiceError::NotReady => {
                (StatusCode::SERVICE_UNAVAILABLE, "index not loaded yet".to_string())
            }
            ServiceError::EmptyMention => (
                StatusCode::UNPROCESSABLE_ENTITY,
                "mention normalizes to zero tokens".to_string(),
            ),
            ServiceError::Internal(message) => (StatusCode::INTERNAL_SERVER_ERROR, message),
        };
        (status, Json(json!({ "error": message }))).into_response()
    }
}

#[derive(Deserialize)]
struct ExtractRequest {
    text: String,
    #[serde(default)]
    id: Option<String>,
}

#[derive(Serialize)]
struct ExtractResponse {
    spans: Vec<MentionSpan>,
}

#[derive(Deserialize)]
struct LinkRequest {
    mention: String,
    #[serde(default)]
    k: Option<usize>,
}

#[derive(Serialize)]
struct LinkResponse {
    candidates: Vec<CodeCandidate>,
}

#[derive(Deserialize)]
struct CodeRequest {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    suspicion: Option<String>,
    #[serde(default)]
    confirmation: Option<String>,
    #[serde(default)]
    specialty: Option<String>,
    #[serde(default)]
    k: Option<usize>,
}

impl CodeRequest {
    fn into_referral(self) -> (Referral, Option<usize>) {
        let text = match self.text {
            Some(t) => t,
            None => {
                let parts: Vec<String> = [self.suspicion, self.confirmation]
                    .into_iter()
                    .flatten()
                    .collect();
                parts.join(" | ")
            }
        };
        (
            Referral {
                id: self.id.unwrap_or_default(),
                text,
                specialty: self.specialty,
            },
            self.k,
        )
    }
}

async fn health(State(state): State<AppState>) -> Result<Json<serde_json::Value>, ServiceError> {
    let engine = state.engine()?;
    let manifest: Manifest = engine.index().manifest();
    Ok(Json(json!({
        "status": "ok",
        "doc_count": manifest.stats.doc_count,
        "manifest": manifest,
    })))
}

async fn extract(
    State(state): State<AppState>,
    Json(request): Json<ExtractRequest>,
) -> Result<Json<ExtractResponse>, ServiceError> {
    let engine = state.engine()?;
    let id = request.id.unwrap_or_default();
    let spans = engine.extract(&id, &request.text)?;
    Ok(Json(ExtractResponse { spans }))
}

async fn link(
    State(state): State<AppState>,
    Json(request): Json<LinkRequest>,
) -> Result<Json<LinkResponse>, ServiceError> {
    let engine = state.engine()?;
    let k = request.k.unwrap_or(engine.k()).max(1);
    let candidates = engine.link(&request.mention, k)?;
    Ok(Json(LinkResponse { candidates }))
}

async fn code(
    State(state): State<AppState>,
    Json(request): Json<CodeRequest>,
) -> Result<Json<CodingResult>, ServiceError> {
    let engine = state.engine()?;
    let (referral, k) = request.into_referral();
    let k = k.unwrap_or(engine.k()).max(1);
    let result = engine.code_referral_with_k(&referral, k)?;
    Ok(Json(result))
}

/// Assemble the service router around shared state.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/extract", post(extract))
        .route("/link", post(link))
        .route("/code", post(code))
        .with_state(state)
}

/// Bind and serve until the process is stopped. The index loads in a
/// background task so the socket answers (with 503) immediately.
pub async fn serve(cfg: medlinker_core::PipelineConfig, port: u16) -> anyhow::Result<()> {
    let state = AppState::empty();
    let app = router(state.clone());
    let loader_state = state.clone();
    tokio::task::spawn_blocking(move || match CodingEngine::from_config(&cfg) {
        Ok(engine) => {
            loader_state.install(engine);
            println!("index loaded; endpoints ready");
        }
        Err(e) => {
            eprintln!("failed to load index: {e}");
            std::process::exit(2);
        }
    });

    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    println!("medlinker serving on port {port}");
    axum::serve(listener, app).await?;
    Ok(())
}
