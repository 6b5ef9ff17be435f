//! HTTP endpoints: chat client, dashboard, admin and health.
//!
//! Client responses carry only the session token and dialog text. Dashboard
//! and admin responses are for requesters and do name systems.

use std::collections::{BTreeSet, HashMap};
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use dialhub_core::analytics::{
    collection_cost, filter_and_rank, ngram_frequencies, progress_series, system_summary, AnalyticsError, Bucket,
    DialogFilter, NullScorer, QualityScorer, RankBy,
};
use dialhub_core::model::now_millis;
use dialhub_core::registry::RegistryError;
use dialhub_core::store::{EventPayload, RatingRecord, RedactionRecord, StoreError};
use dialhub_core::{
    Connector, DialogStore, FeedbackEvent, FeedbackKind, Health, Money, Orchestrator, OrchestratorError, Registry,
    Session, SessionId, SessionStatus, SessionToken, Side, StoreOptions, SystemId, DEFAULT_MIN_TURNS,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tracing::{info, warn};

use crate::config::{Config, SystemEntry};
use crate::connector::HttpConnector;

pub struct AppState {
    pub orchestrator: Arc<Orchestrator>,
    pub admin_token: Option<String>,
    pub scorer: Arc<dyn QualityScorer>,
}

impl AppState {
    pub fn new(orchestrator: Arc<Orchestrator>, admin_token: Option<String>) -> Self {
        Self { orchestrator, admin_token, scorer: Arc::new(NullScorer) }
    }

    fn store(&self) -> &DialogStore {
        self.orchestrator.store()
    }
}

/// Error body returned by every endpoint: `{"code": ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into() } }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        use OrchestratorError as E;
        let status = match &e {
            E::UnknownSession => StatusCode::NOT_FOUND,
            E::SessionEnded => StatusCode::CONFLICT,
            E::NoSystemsAvailable | E::AllSystemsFailed => StatusCode::SERVICE_UNAVAILABLE,
            E::EmptyUtterance => StatusCode::BAD_REQUEST,
            E::InvalidTurnIndex { .. } | E::MissingPayload | E::UnexpectedPayload => StatusCode::UNPROCESSABLE_ENTITY,
            E::Registry(RegistryError::DuplicateId(_)) => StatusCode::CONFLICT,
            E::Registry(RegistryError::UnknownSystem(_)) => StatusCode::NOT_FOUND,
            E::Registry(RegistryError::InvalidEndpoint(_) | RegistryError::EmptyDomains(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            E::InvalidConfig(_) | E::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let message = match &e {
            // Internal details stay in the server log.
            E::Storage(detail) | E::InvalidConfig(detail) => {
                warn!(error = %detail, "internal failure");
                "internal failure; see server log".to_string()
            }
            other => other.to_string(),
        };
        Self::new(status, e.code(), message)
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        let (status, code) = match &e {
            AnalyticsError::UnknownSystem(_) => (StatusCode::NOT_FOUND, "UNKNOWN_SYSTEM"),
            AnalyticsError::InvalidFilter(_) => (StatusCode::BAD_REQUEST, "INVALID_FILTER"),
            AnalyticsError::UnknownRankAttribute(_) => (StatusCode::BAD_REQUEST, "UNKNOWN_RANK_ATTRIBUTE"),
            AnalyticsError::InvalidNgramSize(_) => (StatusCode::BAD_REQUEST, "INVALID_NGRAM_SIZE"),
            AnalyticsError::NegativeBudget => (StatusCode::BAD_REQUEST, "NEGATIVE_BUDGET"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        OrchestratorError::from(e).into()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned + Default>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn parse_required<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn query<T: DeserializeOwned>(q: Result<Query<T>, axum::extract::rejection::QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(format!("invalid query: {}", e.body_text())))
}

// ---- client ----

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StartRequest {
    user_meta: HashMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartResponse {
    pub session_token: SessionToken,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub greeting: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientUtterance {
    pub turn_index: usize,
    pub side: Side,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceResponse {
    pub session_token: SessionToken,
    pub turn_index: usize,
    pub history_delta: Vec<ClientUtterance>,
    pub session_ended: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryResponse {
    pub session_token: SessionToken,
    pub status: SessionStatus,
    pub history: Vec<ClientUtterance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub acknowledged: bool,
}

const ACK: Ack = Ack { acknowledged: true };

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRequest {
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackRequest {
    kind: FeedbackKind,
    turn_index: usize,
    #[serde(default)]
    payload: Option<String>,
}

fn client_history(session: &Session, from_turn: usize) -> Vec<ClientUtterance> {
    session
        .turns
        .iter()
        .enumerate()
        .skip(from_turn)
        .flat_map(|(i, t)| {
            [&t.user, &t.system].map(|u| ClientUtterance {
                turn_index: i,
                side: u.side,
                text: u.text.clone(),
                timestamp: u.timestamp,
            })
        })
        .collect()
}

async fn start_session(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<StartResponse> {
    let req: StartRequest = parse_body(&body)?;
    let started = st.orchestrator.start_session(req.user_meta)?;
    Ok(Json(StartResponse { session_token: started.session_token, greeting: started.greeting }))
}

fn resolve(st: &AppState, token: &str) -> Result<SessionId, ApiError> {
    Ok(st.orchestrator.resolve_token(&SessionToken::new(token))?)
}

async fn post_utterance(
    State(st): State<Arc<AppState>>,
    Path(token): Path<String>,
    body: Bytes,
) -> ApiResult<UtteranceResponse> {
    let id = resolve(&st, &token)?;
    let req: UtteranceRequest = parse_required(&body)?;
    let outcome = st.orchestrator.handle_utterance(id, &req.text).await?;
    let session = st.orchestrator.session(&id)?;
    Ok(Json(UtteranceResponse {
        session_token: session.session_token.clone(),
        turn_index: outcome.turn_index,
        history_delta: client_history(&session, outcome.turn_index),
        session_ended: outcome.session_ended,
    }))
}

async fn post_feedback(State(st): State<Arc<AppState>>, Path(token): Path<String>, body: Bytes) -> ApiResult<Ack> {
    let id = resolve(&st, &token)?;
    let req: FeedbackRequest = parse_required(&body)?;
    let event = FeedbackEvent { kind: req.kind, turn_index: req.turn_index, payload: req.payload, timestamp: now_millis() };
    st.orchestrator.record_feedback(id, event).await?;
    Ok(Json(ACK))
}

async fn end_session(State(st): State<Arc<AppState>>, Path(token): Path<String>) -> ApiResult<Ack> {
    let id = resolve(&st, &token)?;
    st.orchestrator.end_session(id).await?;
    Ok(Json(ACK))
}

async fn get_history(State(st): State<Arc<AppState>>, Path(token): Path<String>) -> ApiResult<HistoryResponse> {
    let id = resolve(&st, &token)?;
    let session = st.orchestrator.session(&id)?;
    Ok(Json(HistoryResponse {
        session_token: session.session_token.clone(),
        status: session.status,
        history: client_history(&session, 0),
    }))
}

// ---- dashboard ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemInfo {
    pub system_id: SystemId,
    pub name: String,
    pub domains: BTreeSet<String>,
    pub health: Health,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogRow {
    pub session_id: SessionId,
    pub created_at: DateTime<Utc>,
    pub matched_system: SystemId,
    pub status: SessionStatus,
    pub turns: usize,
    pub utterances: usize,
    pub likes: usize,
    pub dislikes: usize,
    pub quality: Option<f64>,
    pub human_rating: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogPage {
    pub total: usize,
    pub dialogs: Vec<DialogRow>,
}

async fn list_systems(State(st): State<Arc<AppState>>) -> ApiResult<Vec<SystemInfo>> {
    let systems = st.orchestrator.registry().list();
    Ok(Json(
        systems
            .into_iter()
            .map(|d| SystemInfo { system_id: d.system_id, name: d.name, domains: d.domains, health: d.health })
            .collect(),
    ))
}

async fn summary(
    State(st): State<Arc<AppState>>,
    Path(system): Path<String>,
) -> ApiResult<dialhub_core::analytics::SystemSummary> {
    Ok(Json(system_summary(&SystemId::new(system), &st.store().snapshot(), st.scorer.as_ref())?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NgramQuery {
    #[serde(default = "one")]
    n: usize,
    side: Option<Side>,
    #[serde(default = "one")]
    min_count: usize,
}

fn one() -> usize {
    1
}

async fn ngrams(
    State(st): State<Arc<AppState>>,
    Path(system): Path<String>,
    q: Result<Query<NgramQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Vec<dialhub_core::analytics::NgramCount>> {
    let q = query(q)?;
    Ok(Json(ngram_frequencies(&SystemId::new(system), q.side, q.n, q.min_count, &st.store().snapshot())?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgressQuery {
    bucket: Option<String>,
}

async fn progress(
    State(st): State<Arc<AppState>>,
    Path(system): Path<String>,
    q: Result<Query<ProgressQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Vec<dialhub_core::analytics::ProgressPoint>> {
    let q = query(q)?;
    let bucket: Bucket = q.bucket.as_deref().unwrap_or("DAY").parse().map_err(ApiError::bad_request)?;
    Ok(Json(progress_series(&SystemId::new(system), bucket, &st.store().snapshot())?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogQuery {
    filter: Option<String>,
    rank: Option<String>,
    limit: Option<usize>,
}

async fn dialogs(
    State(st): State<Arc<AppState>>,
    q: Result<Query<DialogQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<DialogPage> {
    let q = query(q)?;
    let filter: DialogFilter = q.filter.as_deref().unwrap_or("").parse()?;
    let rank: Option<RankBy> = q.rank.as_deref().map(str::parse).transpose()?;
    let ranked = filter_and_rank(&filter, rank, &st.store().snapshot(), st.scorer.as_ref())?;
    let total = ranked.len();
    let dialogs = ranked
        .iter()
        .take(q.limit.unwrap_or(usize::MAX))
        .map(|s| DialogRow {
            session_id: s.session_id,
            created_at: s.created_at,
            matched_system: s.matched_system.clone(),
            status: s.status,
            turns: s.count_units().turns,
            utterances: s.count_units().utterances,
            likes: s.feedback_count(FeedbackKind::Like),
            dislikes: s.feedback_count(FeedbackKind::Dislike),
            quality: st.scorer.score(s),
            human_rating: s.human_rating,
        })
        .collect();
    Ok(Json(DialogPage { total, dialogs }))
}

async fn dialog(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Session> {
    let id: SessionId = id.parse().map_err(|_| ApiError::bad_request("session id must be a UUID"))?;
    Ok(Json(st.store().get_session(&id)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostQuery {
    budget: String,
    min_turns: Option<usize>,
}

async fn cost(
    State(st): State<Arc<AppState>>,
    q: Result<Query<CostQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<dialhub_core::analytics::CostReport> {
    let q = query(q)?;
    let budget: Money = q.budget.parse().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_BUDGET", format!("{e}")))?;
    let sessions = st.store().sessions();
    Ok(Json(collection_cost(budget, &sessions, q.min_turns.unwrap_or(DEFAULT_MIN_TURNS))?))
}

// ---- admin ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registered {
    pub system_id: SystemId,
}

async fn register_system(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Registered> {
    let entry: SystemEntry = parse_required(&body)?;
    let descriptor =
        entry.to_descriptor().map_err(|m| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_SYSTEM", m))?;
    let system_id = st.orchestrator.register_system(descriptor)?;
    Ok(Json(Registered { system_id }))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatingImport {
    session_id: SessionId,
    rating: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Imported {
    pub imported: usize,
}

/// All-or-nothing: every rating is checked before any is stored.
async fn import_ratings(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Imported> {
    let ratings: Vec<RatingImport> = parse_required(&body)?;
    for r in &ratings {
        if !r.rating.is_finite() {
            return Err(ApiError::bad_request(format!("rating for {} is not a finite number", r.session_id)));
        }
        st.store().get_session(&r.session_id)?;
    }
    for r in &ratings {
        st.store().append(EventPayload::HumanRating(RatingRecord { session_id: r.session_id, rating: r.rating }))?;
    }
    Ok(Json(Imported { imported: ratings.len() }))
}

async fn redact(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Ack> {
    let id: SessionId = id.parse().map_err(|_| ApiError::bad_request("session id must be a UUID"))?;
    st.store().append(EventPayload::Redacted(RedactionRecord { session_id: id }))?;
    Ok(Json(ACK))
}

async fn export_log(State(st): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let mut out = Vec::new();
    st.store().export(&mut out)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response())
}

async fn probe_now(State(st): State<Arc<AppState>>) -> ApiResult<Vec<SystemInfo>> {
    st.orchestrator.probe_all().await;
    list_systems(State(st)).await
}

async fn require_admin(State(st): State<Arc<AppState>>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(expected) = &st.admin_token {
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(expected.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "admin token required").into_response();
        }
    }
    next.run(req).await
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    let admin = Router::new()
        .route("/systems", post(register_system))
        .route("/ratings", post(import_ratings))
        .route("/sessions/{id}/redact", post(redact))
        .route("/export", get(export_log))
        .route("/probe", post(probe_now))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_admin));
    Router::new()
        .route("/health", get(health))
        .route("/api/session", post(start_session))
        .route("/api/session/{token}", get(get_history))
        .route("/api/session/{token}/utterance", post(post_utterance))
        .route("/api/session/{token}/feedback", post(post_feedback))
        .route("/api/session/{token}/end", post(end_session))
        .route("/api/dashboard/systems", get(list_systems))
        .route("/api/dashboard/systems/{id}/summary", get(summary))
        .route("/api/dashboard/systems/{id}/ngrams", get(ngrams))
        .route("/api/dashboard/systems/{id}/progress", get(progress))
        .route("/api/dashboard/dialogs", get(dialogs))
        .route("/api/dashboard/dialogs/{id}", get(dialog))
        .route("/api/dashboard/cost", get(cost))
        .nest("/api/admin", admin)
        .fallback(not_found)
        .with_state(state)
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: SocketAddr, source: std::io::Error },
    #[error("cannot open the event store: {0}")]
    Storage(#[from] StoreError),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Opens the store under `config.server.data_dir` and wires an orchestrator
/// using `connector`, registering any configured system not already known.
pub fn build_state(config: &Config, connector: Arc<dyn Connector>) -> Result<Arc<AppState>, ServeError> {
    config.validate().map_err(ServeError::InvalidConfig)?;
    let store = DialogStore::open(&config.server.data_dir, StoreOptions { sync: config.server.sync_writes })?;
    let registry = Arc::new(Registry::new(config.routing.failure_threshold));
    let orchestrator = Orchestrator::new(
        config.orchestrator_config().map_err(ServeError::InvalidConfig)?,
        registry,
        Arc::new(store),
        connector,
    )
    .map_err(|e| ServeError::InvalidConfig(e.to_string()))?;
    for entry in &config.systems {
        let descriptor = entry.to_descriptor().map_err(ServeError::InvalidConfig)?;
        if !orchestrator.registry().contains(&descriptor.system_id) {
            orchestrator.register_system(descriptor).map_err(|e| ServeError::InvalidConfig(e.to_string()))?;
        }
    }
    Ok(Arc::new(AppState::new(Arc::new(orchestrator), config.server.admin_token.clone())))
}

/// Serves `state` on `listener` until `shutdown` resolves, then stops
/// accepting connections and waits for in-flight requests to finish.
pub async fn run(
    listener: TcpListener,
    state: Arc<AppState>,
    probe_interval: Duration,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let prober = {
        let orchestrator = state.orchestrator.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(probe_interval);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            tick.tick().await;
            loop {
                tick.tick().await;
                orchestrator.probe_all().await;
            }
        })
    };
    info!(addr = ?listener.local_addr().ok(), "listening");
    let result = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    prober.abort();
    info!("server stopped");
    Ok(result?)
}

pub async fn serve(config: Config, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
    config.validate().map_err(ServeError::InvalidConfig)?;
    let addr = config.bind_addr().map_err(ServeError::InvalidConfig)?;
    let orchestrator_config = config.orchestrator_config().map_err(ServeError::InvalidConfig)?;
    let connector = Arc::new(HttpConnector::new(config.connector_timeout(), orchestrator_config.slot_schema.slot_names()));
    let state = build_state(&config, connector)?;
    let listener = TcpListener::bind(addr).await.map_err(|source| ServeError::BindFailure { addr, source })?;
    run(listener, state, Duration::from_secs(config.server.probe_interval_secs), shutdown).await
}
