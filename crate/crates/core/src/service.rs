//! HTTP API: catalog browsing, outfit completion with explanations, FITB
//! scoring and explanation replay.
//!
//! Engine calls are blocking and run on the blocking pool, bounded by a
//! semaphore and by the configured request timeout.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::attribute::AestheticAttribute;
use crate::config::ServiceSection;
use crate::datastore::{DatastoreError, FitbQuestion};
use crate::embedder::EmbedError;
use crate::fusion::{AavaSign, FusionDiagnostics, FusionError};
use crate::pipeline::{Engine, EngineError, PipelineConfig};
use crate::reasoning::{AttributeThought, CacheMode, CachedReasoning, Digest32, InvokeError, ReasoningError};
use crate::retrieval::RetrievalError;

pub const MAX_K: usize = 100;
pub const DEFAULT_K: usize = 10;
pub const MAX_PAGE_SIZE: usize = 200;
pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const TOTAL_COUNT_HEADER: &str = "x-total-count";

#[derive(Clone)]
pub struct AppState {
    engine: Engine,
    pipeline: PipelineConfig,
    timeout: Duration,
    permits: Arc<Semaphore>,
}

impl AppState {
    pub fn new(engine: Engine, pipeline: PipelineConfig, service: &ServiceSection) -> Self {
        Self {
            engine,
            pipeline,
            timeout: Duration::from_secs_f64(service.request_timeout_secs),
            permits: Arc::new(Semaphore::new(service.max_concurrent_requests)),
        }
    }
}

/// An error response: HTTP status plus a machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": { "code": self.code, "message": self.message } }))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        match &e {
            EngineError::Datastore(d) => match d {
                DatastoreError::UnknownItem(_) => Self::bad_request("unknown_item", msg),
                DatastoreError::UnknownCategory(_) | DatastoreError::EmptyCategory(_) => {
                    Self::bad_request("unknown_category", msg)
                }
                DatastoreError::InvalidQuestion { .. } => Self::bad_request("invalid_request", msg),
                _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
            },
            EngineError::Retrieval(r) => match r {
                RetrievalError::InvalidK => Self::bad_request("bad_k", msg),
                RetrievalError::UnknownCategory(_) | RetrievalError::EmptyCatalog => {
                    Self::bad_request("unknown_category", msg)
                }
                RetrievalError::TooFewCandidates(_) => Self::bad_request("invalid_request", msg),
                RetrievalError::DimensionMismatch { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
            },
            EngineError::Reasoning(r) => match r {
                ReasoningError::Invoke(InvokeError::Timeout { .. }) => Self::new(StatusCode::GATEWAY_TIMEOUT, "timeout", msg),
                ReasoningError::Parse(_) => Self::new(StatusCode::BAD_GATEWAY, "reasoning_invalid", msg),
                ReasoningError::EmptyOutfit => Self::bad_request("invalid_request", msg),
                ReasoningError::TooManyImages { .. } => Self::bad_request("too_many_items", msg),
                r if r.is_unavailable() || matches!(r, ReasoningError::CacheMissInReplayMode { .. }) => {
                    Self::new(StatusCode::SERVICE_UNAVAILABLE, "reasoning_unavailable", msg)
                }
                _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
            },
            EngineError::Embed(EmbedError::Unavailable(_) | EmbedError::Status { .. }) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "embedder_unavailable", msg)
            }
            EngineError::Embed(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "embedder_error", msg),
            EngineError::Fusion(FusionError::EmptyOutfit) => Self::bad_request("invalid_request", msg),
            EngineError::Fusion(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

/// Runs blocking engine work with the concurrency bound and request timeout.
async fn run_engine<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = state.engine.clone();
    let work = async {
        let _permit = state.permits.acquire().await.expect("semaphore never closed");
        tokio::task::spawn_blocking(move || f(&engine)).await
    };
    match with_timeout(state.timeout, work).await {
        Some(Ok(r)) => r.map_err(ApiError::from),
        Some(Err(join)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", join.to_string())),
        None => Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "timeout", "request exceeded the configured timeout")),
    }
}

async fn with_timeout<F: Future>(limit: Duration, f: F) -> Option<F::Output> {
    tokio::time::timeout(limit, f).await.ok()
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))
}

// ---- /health

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub catalog_items: usize,
    pub cache_mode: CacheMode,
    pub components: BTreeMap<String, String>,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let engine = state.engine.clone();
    let mode = state.pipeline.mode;
    let (embedder_up, mllm) = tokio::task::spawn_blocking(move || {
        let embedder_up = engine.embedder().reachable();
        let mllm = match (mode, engine.mllm()) {
            (CacheMode::Replay, _) => "replay",
            (CacheMode::Live, Some(m)) if m.reachable() => "up",
            _ => "down",
        };
        (embedder_up, mllm)
    })
    .await
    .unwrap_or((false, "down"));
    let mut components = BTreeMap::new();
    components.insert("catalog".to_string(), "up".to_string());
    components.insert("embedder".to_string(), if embedder_up { "up" } else { "down" }.to_string());
    components.insert("mllm".to_string(), mllm.to_string());
    let degraded = !embedder_up || mllm == "down";
    Json(Health {
        status: if degraded { "degraded" } else { "ok" }.into(),
        catalog_items: state.engine.catalog().len(),
        cache_mode: mode,
        components,
    })
}

// ---- /items

#[derive(Debug, Deserialize)]
struct ItemsQuery {
    category: Option<String>,
    page: Option<String>,
    size: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ItemView {
    pub item_id: String,
    pub category: String,
    pub description: String,
    pub image_ref: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ItemPage {
    pub items: Vec<ItemView>,
    pub page: usize,
    pub size: usize,
    pub total: usize,
}

fn parse_count(raw: Option<&str>, default: usize, name: &str) -> Result<usize, ApiError> {
    match raw {
        None => Ok(default),
        Some(s) => s
            .parse::<usize>()
            .map_err(|_| ApiError::bad_request("bad_pagination", format!("{name} must be a positive integer"))),
    }
}

async fn items(State(state): State<AppState>, Query(q): Query<ItemsQuery>) -> Result<Response, ApiError> {
    let page = parse_count(q.page.as_deref(), 1, "page")?;
    let size = parse_count(q.size.as_deref(), DEFAULT_PAGE_SIZE, "size")?;
    if page == 0 || size == 0 || size > MAX_PAGE_SIZE {
        return Err(ApiError::bad_request(
            "bad_pagination",
            format!("page must be >= 1 and size in 1..={MAX_PAGE_SIZE}"),
        ));
    }
    let catalog = state.engine.catalog();
    let mut matching: Vec<_> = catalog
        .items()
        .iter()
        .filter(|it| q.category.as_deref().is_none_or(|c| it.category == c))
        .collect();
    matching.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let total = matching.len();
    let items = matching
        .into_iter()
        .skip((page - 1).saturating_mul(size))
        .take(size)
        .map(|it| ItemView {
            item_id: it.item_id.clone(),
            category: it.category.clone(),
            description: it.description.clone(),
            image_ref: it.image_ref.clone(),
        })
        .collect();
    let mut resp = Json(ItemPage { items, page, size, total }).into_response();
    resp.headers_mut()
        .insert(HeaderName::from_static(TOTAL_COUNT_HEADER), HeaderValue::from(total));
    Ok(resp)
}

// ---- shared response pieces

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Explanation {
    pub target_description: String,
    pub identification: String,
    pub attributes: BTreeMap<AestheticAttribute, AttributeThought>,
    pub incomplete: Vec<AestheticAttribute>,
    pub model_id: String,
    pub prompt_hash: Digest32,
}

impl Explanation {
    fn from_reasoning(r: &CachedReasoning) -> Self {
        let rec = &r.record;
        Self {
            target_description: rec.target_description.clone(),
            identification: rec.identification_summary.clone(),
            attributes: rec.profile.thoughts.clone(),
            incomplete: rec.profile.incomplete.clone(),
            model_id: rec.model_id.clone(),
            prompt_hash: rec.prompt_hash,
        }
    }
}

/// Whitelisted per-request pipeline overrides.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    tau: Option<f64>,
    k: Option<usize>,
    aava_sign: Option<AavaSign>,
}

impl Overrides {
    fn apply(&self, base: &PipelineConfig) -> Result<PipelineConfig, ApiError> {
        let mut cfg = base.clone();
        if let Some(tau) = self.tau {
            cfg.tau = tau;
        }
        if let Some(sign) = self.aava_sign {
            cfg.aava_sign = sign;
        }
        cfg.validate().map_err(|r| ApiError::bad_request("bad_override", r))?;
        Ok(cfg)
    }
}

// ---- /recommend

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecommendRequest {
    outfit_item_ids: Vec<String>,
    target_category: String,
    k: Option<usize>,
    #[serde(default)]
    overrides: Overrides,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RankedView {
    pub rank: usize,
    pub item_id: String,
    pub score: f64,
    pub image_ref: String,
    pub category: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RecommendResponse {
    pub request_id: String,
    pub items: Vec<RankedView>,
    pub explanation: Explanation,
    pub diagnostics: FusionDiagnostics,
}

async fn recommend(State(state): State<AppState>, body: Bytes) -> Result<Json<RecommendResponse>, ApiError> {
    let req: RecommendRequest = parse_body(&body)?;
    if req.outfit_item_ids.is_empty() {
        return Err(ApiError::bad_request("invalid_request", "outfit_item_ids must not be empty"));
    }
    let k = req.k.or(req.overrides.k).unwrap_or(DEFAULT_K);
    if k == 0 || k > MAX_K {
        return Err(ApiError::bad_request("bad_k", format!("k must be in 1..={MAX_K}")));
    }
    let cfg = req.overrides.apply(&state.pipeline)?;
    let rec = run_engine(&state, move |engine| {
        engine.complete_outfit(&req.outfit_item_ids, &req.target_category, k, &cfg)
    })
    .await?;
    let catalog = state.engine.catalog();
    let items = rec
        .ranked
        .items
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let item = catalog.item(r.index);
            RankedView {
                rank: i + 1,
                item_id: r.item_id.clone(),
                score: r.score,
                image_ref: item.image_ref.clone(),
                category: item.category.clone(),
            }
        })
        .collect();
    Ok(Json(RecommendResponse {
        request_id: rec.reasoning.key.to_hex(),
        items,
        explanation: Explanation::from_reasoning(&rec.reasoning),
        diagnostics: rec.query.diagnostics,
    }))
}

// ---- /fitb

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitbRequest {
    #[serde(default)]
    question_id: Option<String>,
    outfit_item_ids: Vec<String>,
    candidate_item_ids: Vec<String>,
    #[serde(default)]
    overrides: Overrides,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FitbResponse {
    pub request_id: String,
    pub chosen_index: usize,
    pub chosen_item_id: String,
    pub scores: Vec<f64>,
    pub explanation: Explanation,
    pub diagnostics: FusionDiagnostics,
}

async fn fitb(State(state): State<AppState>, body: Bytes) -> Result<Json<FitbResponse>, ApiError> {
    let req: FitbRequest = parse_body(&body)?;
    if req.outfit_item_ids.is_empty() {
        return Err(ApiError::bad_request("invalid_request", "outfit_item_ids must not be empty"));
    }
    if req.candidate_item_ids.len() < 2 {
        return Err(ApiError::bad_request("invalid_request", "at least two candidates are required"));
    }
    let cfg = req.overrides.apply(&state.pipeline)?;
    let question = FitbQuestion {
        question_id: req.question_id.unwrap_or_else(|| "request".into()),
        outfit_item_ids: req.outfit_item_ids,
        candidate_item_ids: req.candidate_item_ids,
        answer_index: 0,
    };
    let candidates = question.candidate_item_ids.clone();
    let answer = run_engine(&state, move |engine| engine.answer_fitb(&question, &cfg)).await?;
    Ok(Json(FitbResponse {
        request_id: answer.reasoning.key.to_hex(),
        chosen_index: answer.chosen,
        chosen_item_id: candidates[answer.chosen].clone(),
        scores: answer.scores,
        explanation: Explanation::from_reasoning(&answer.reasoning),
        diagnostics: answer.query.diagnostics,
    }))
}

// ---- /explain/{request_id}

async fn explain(State(state): State<AppState>, Path(request_id): Path<String>) -> Result<Json<Value>, ApiError> {
    let key = Digest32::from_hex(&request_id)
        .ok_or_else(|| ApiError::bad_request("bad_request_id", "request id must be 64 hex characters"))?;
    let cache = state.engine.cache(CacheMode::Replay);
    let record = tokio::task::spawn_blocking(move || cache.get(&key))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_request", format!("no explanation for {request_id}")))?;
    let explanation = Explanation::from_reasoning(&CachedReasoning { key, record, from_cache: true, invocations: 0 });
    Ok(Json(json!({ "request_id": request_id, "explanation": explanation })))
}

fn cors(origins: &[String]) -> CorsLayer {
    let base = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any)
        .expose_headers([HeaderName::from_static(TOTAL_COUNT_HEADER)]);
    if origins.iter().any(|o| o == "*") {
        base.allow_origin(Any)
    } else {
        let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
        base.allow_origin(AllowOrigin::list(list))
    }
}

pub fn router(state: AppState, service: &ServiceSection) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/items", get(items))
        .route("/recommend", post(recommend))
        .route("/fitb", post(fitb))
        .route("/explain/{request_id}", get(explain))
        .layer(cors(&service.cors_origins))
        .with_state(state)
}

/// Binds `service.bind` and serves until ctrl-c.
pub async fn serve(state: AppState, service: &ServiceSection) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&service.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state, service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
