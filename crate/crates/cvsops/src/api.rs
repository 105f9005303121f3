//! HTTP API over the platform engine.
//!
//! Every route needs `Authorization: Bearer <token>`. Every `POST` needs an
//! `Idempotency-Key` header: a retry with the same key and body gets the
//! first response back, a different body under a used key is rejected.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cvs_core::annotator_flow::funnel_report;
use cvs_core::domain::{
    AnnotatorEvent, AnnotatorId, AnnotatorProfile, Assessment, CaseId, ClipId, PreAnnotation, VideoEvent,
};
use cvs_core::evaluation::{leaderboard, ClipPrediction, Submission, SubmissionMeta};
use cvs_core::orchestrator::{ApplyError, EngineError, Notifier, SystemClock};
use cvs_core::scheduler::blind_payload;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::cli::BlindAssignment;
use crate::config::OpsConfig;
use crate::platform::{self, Engine};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const REPLAYED_HEADER: &str = "idempotent-replayed";
const MAX_BODY: usize = 64 * 1024 * 1024;

/// Engine plus its notification adapter, behind one lock.
pub struct Service {
    pub cfg: OpsConfig,
    pub engine: Engine,
    pub notifier: Box<dyn Notifier + Send>,
}

impl Service {
    fn snapshot(&self) {
        if let Err(e) = platform::save_snapshot(&self.cfg, self.engine.state()) {
            tracing::error!("snapshot failed: {e:#}");
        }
    }

    fn run_effects(&mut self) -> cvs_core::orchestrator::EffectReport {
        self.engine.run_due_effects(self.notifier.as_mut())
    }
}

enum Idem {
    InFlight,
    Done { fingerprint: Bytes, status: StatusCode, body: Bytes },
}

#[derive(Clone)]
pub struct AppState {
    service: Arc<Mutex<Service>>,
    idempotency: Arc<Mutex<HashMap<String, Idem>>>,
    token: Arc<str>,
}

impl AppState {
    pub fn new(service: Service, token: impl Into<Arc<str>>) -> Self {
        Self {
            service: Arc::new(Mutex::new(service)),
            idempotency: Arc::new(Mutex::new(HashMap::new())),
            token: token.into(),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Service> {
        self.service.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs pending effects once; used by the background poller.
    pub fn poll_effects(&self) -> cvs_core::orchestrator::EffectReport {
        let mut s = self.lock();
        let report = s.run_effects();
        if !report.executed.is_empty() || !report.failed.is_empty() {
            s.snapshot();
        }
        report
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    class: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, class: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            class,
            message: message.into(),
        }
    }

    fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("{what} not found"))
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::NotFound(_) | EngineError::Apply(ApplyError::NotFound(_)) => StatusCode::NOT_FOUND,
            EngineError::Apply(ApplyError::AlreadyExists(_)) => StatusCode::CONFLICT,
            EngineError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.class(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "error_class": self.class }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok(v: impl serde::Serialize) -> ApiResult {
    Ok(Json(v).into_response())
}

fn created(v: impl serde::Serialize) -> ApiResult {
    Ok((StatusCode::CREATED, Json(v)).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/annotators", get(list_annotators).post(create_annotator))
        .route("/annotators/{id}", get(get_annotator))
        .route("/annotators/{id}/events", post(annotator_event))
        .route("/videos", get(list_videos).post(create_video))
        .route("/videos/{id}", get(get_video))
        .route("/videos/{id}/screening", post(screen_video))
        .route("/videos/{id}/events", post(video_event))
        .route("/assignments", get(list_assignments))
        .route("/assignments/ticks", post(run_tick))
        .route("/assessments", get(list_assessments).post(submit_assessment))
        .route("/submissions", get(list_submissions).post(submit_predictions))
        .route("/metrics", get(metrics))
        .route("/leaderboard", get(get_leaderboard))
        .route("/funnel", get(funnel))
        .layer(middleware::from_fn_with_state(state.clone(), idempotency))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented.is_some_and(|t| constant_time_eq(t.as_bytes(), state.token.as_bytes())) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or invalid bearer token").into_response()
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn idempotency(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if req.method() != Method::POST {
        return next.run(req).await;
    }
    let Some(key) = req
        .headers()
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|k| !k.is_empty())
        .map(str::to_string)
    else {
        return ApiError::new(StatusCode::BAD_REQUEST, "IDEMPOTENCY_KEY_REQUIRED", "Idempotency-Key header required")
            .into_response();
    };
    let (parts, body) = req.into_parts();
    let bytes = match to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(e) => return ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "BODY", e.to_string()).into_response(),
    };
    let mut fp = Vec::with_capacity(bytes.len() + 64);
    fp.extend_from_slice(parts.uri.path().as_bytes());
    fp.push(0);
    fp.extend_from_slice(&bytes);
    let fingerprint = Bytes::from(fp);

    {
        let mut map = state.idempotency.lock().unwrap_or_else(|p| p.into_inner());
        match map.get(&key) {
            Some(Idem::Done { fingerprint: f, status, body }) if *f == fingerprint => {
                let mut resp = (*status, body.clone()).into_response();
                resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
                resp.headers_mut().insert(REPLAYED_HEADER, HeaderValue::from_static("true"));
                return resp;
            }
            Some(Idem::Done { .. }) => {
                return ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "IDEMPOTENCY_KEY_REUSED",
                    "idempotency key already used with a different request",
                )
                .into_response()
            }
            Some(Idem::InFlight) => {
                return ApiError::new(
                    StatusCode::CONFLICT,
                    "IDEMPOTENCY_IN_FLIGHT",
                    "a request with this idempotency key is in progress",
                )
                .into_response()
            }
            None => {
                map.insert(key.clone(), Idem::InFlight);
            }
        }
    }

    let resp = next.run(Request::from_parts(parts, Body::from(bytes))).await;
    let (parts, body) = resp.into_parts();
    let body = to_bytes(body, MAX_BODY).await.unwrap_or_default();
    let mut map = state.idempotency.lock().unwrap_or_else(|p| p.into_inner());
    if parts.status.is_server_error() {
        map.remove(&key);
    } else {
        map.insert(
            key,
            Idem::Done {
                fingerprint,
                status: parts.status,
                body: body.clone(),
            },
        );
    }
    Response::from_parts(parts, Body::from(body))
}

#[derive(Debug, Deserialize)]
struct AnnotatorFilter {
    state: Option<String>,
}

async fn list_annotators(State(st): State<AppState>, Query(q): Query<AnnotatorFilter>) -> ApiResult {
    let s = st.lock();
    let list: Vec<_> = s
        .engine
        .state()
        .annotators
        .values()
        .filter(|a| {
            q.state
                .as_deref()
                .is_none_or(|want| serde_json::to_value(a.state).ok().and_then(|v| v.as_str().map(|s| s == want)) == Some(true))
        })
        .cloned()
        .collect();
    ok(list)
}

#[derive(Debug, Deserialize)]
struct NewAnnotator {
    annotator_id: AnnotatorId,
    profile: AnnotatorProfile,
}

async fn create_annotator(State(st): State<AppState>, Json(body): Json<NewAnnotator>) -> ApiResult {
    let mut s = st.lock();
    s.engine.contact(&body.annotator_id, body.profile)?;
    s.snapshot();
    created(&s.engine.state().annotators[&body.annotator_id])
}

async fn get_annotator(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let s = st.lock();
    let a = s
        .engine
        .state()
        .annotators
        .get(&AnnotatorId::new(id.clone()))
        .ok_or_else(|| ApiError::not_found(format!("annotator {id}")))?;
    ok(a)
}

async fn annotator_event(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(event): Json<AnnotatorEvent>,
) -> ApiResult {
    let id = AnnotatorId::new(id);
    let mut s = st.lock();
    s.engine.annotator_event(&id, event)?;
    s.run_effects();
    s.snapshot();
    ok(&s.engine.state().annotators[&id])
}

async fn list_videos(State(st): State<AppState>) -> ApiResult {
    let s = st.lock();
    let list: Vec<Value> = s
        .engine
        .state()
        .videos
        .values()
        .map(|v| json!({ "case_id": v.case_id, "state": v.state, "clip_id": v.clip.as_ref().map(|c| &c.clip_id) }))
        .collect();
    ok(list)
}

async fn create_video(
    State(st): State<AppState>,
    Json(rec): Json<cvs_core::video_flow::IntakeRecord>,
) -> ApiResult {
    let mut s = st.lock();
    let id = rec.case_id.clone();
    s.engine.intake(rec)?;
    s.snapshot();
    created(&s.engine.state().videos[&id])
}

async fn get_video(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let s = st.lock();
    let v = s
        .engine
        .state()
        .videos
        .get(&CaseId::new(id.clone()))
        .ok_or_else(|| ApiError::not_found(format!("case {id}")))?;
    ok(v)
}

#[derive(Debug, Deserialize)]
struct ScreeningBody {
    verdict: PreAnnotation,
    #[serde(default)]
    needs_blur: bool,
}

async fn screen_video(State(st): State<AppState>, Path(id): Path<String>, Json(body): Json<ScreeningBody>) -> ApiResult {
    let case = CaseId::new(id);
    let mut s = st.lock();
    let (status, clip) = platform::screen_case(&mut s.engine, &case, body.verdict, body.needs_blur)?;
    s.snapshot();
    let v = &s.engine.state().videos[&case];
    ok(json!({ "case_id": case, "chain_status": status, "state": v.state, "clip_id": clip }))
}

async fn video_event(State(st): State<AppState>, Path(id): Path<String>, Json(event): Json<VideoEvent>) -> ApiResult {
    let case = CaseId::new(id);
    let mut s = st.lock();
    s.engine.video_event(&case, event)?;
    let clip = platform::extract_if_qualified(&mut s.engine, &case)?;
    s.snapshot();
    let v = &s.engine.state().videos[&case];
    ok(json!({ "case_id": case, "state": v.state, "clip_id": clip }))
}

#[derive(Debug, Deserialize)]
struct AssignmentQuery {
    annotator_id: Option<String>,
}

/// Outstanding work. With `annotator_id`, the annotator's blinded payloads;
/// without, the organizer view of every open assignment.
async fn list_assignments(State(st): State<AppState>, Query(q): Query<AssignmentQuery>) -> ApiResult {
    let s = st.lock();
    let state = s.engine.state();
    match q.annotator_id {
        Some(id) => {
            let id = AnnotatorId::new(id);
            if !state.annotators.contains_key(&id) {
                return Err(ApiError::not_found(format!("annotator {id}")));
            }
            let mut out = Vec::new();
            for (clip_id, cov) in &state.coverage.clips {
                let Some(o) = cov.outstanding.get(&id) else { continue };
                let Some(case) = state.clip_case.get(clip_id).and_then(|c| state.videos.get(c)) else {
                    continue;
                };
                let Some(clip) = &case.clip else { continue };
                out.push(BlindAssignment {
                    annotator_id: id.clone(),
                    tick_id: o.tick_id,
                    due_at: o.due_at,
                    clip: blind_payload(clip, &case.provenance),
                });
            }
            ok(out)
        }
        None => {
            let out: Vec<Value> = state
                .coverage
                .clips
                .iter()
                .flat_map(|(clip_id, cov)| {
                    cov.outstanding.iter().map(move |(a, o)| {
                        json!({ "annotator_id": a, "clip_id": clip_id, "tick_id": o.tick_id, "due_at": o.due_at })
                    })
                })
                .collect();
            ok(out)
        }
    }
}

async fn run_tick(State(st): State<AppState>) -> ApiResult {
    let mut s = st.lock();
    let batch = s.engine.run_tick()?;
    let effects = s.run_effects();
    s.snapshot();
    created(json!({ "batch": batch, "effects": effects }))
}

#[derive(Debug, Deserialize)]
struct AssessmentQuery {
    clip_id: Option<String>,
}

async fn list_assessments(State(st): State<AppState>, Query(q): Query<AssessmentQuery>) -> ApiResult {
    let s = st.lock();
    let state = s.engine.state();
    let list: Vec<&Assessment> = match q.clip_id {
        Some(c) => state
            .assessments
            .get(&ClipId::new(c))
            .map(|m| m.values().collect())
            .unwrap_or_default(),
        None => state.assessments.values().flat_map(BTreeMap::values).collect(),
    };
    ok(list)
}

async fn submit_assessment(State(st): State<AppState>, Json(a): Json<Assessment>) -> ApiResult {
    let clip = a.clip_id.clone();
    let mut s = st.lock();
    s.engine.submit_assessment(a)?;
    s.run_effects();
    s.snapshot();
    let fused = s.engine.state().fused.contains_key(&clip);
    created(json!({ "clip_id": clip, "accepted": true, "fused": fused }))
}

async fn list_submissions(State(st): State<AppState>) -> ApiResult {
    let s = st.lock();
    ok(&s.engine.state().submissions)
}

#[derive(Debug, Deserialize)]
struct SubmissionBody {
    submission_id: String,
    #[serde(default)]
    meta: SubmissionMeta,
    predictions: Vec<ClipPrediction>,
}

/// Accepts a prediction file and scores it against the platform's fused
/// labels.
async fn submit_predictions(State(st): State<AppState>, Json(body): Json<SubmissionBody>) -> ApiResult {
    let invalid = |e: &dyn std::fmt::Display| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_SUBMISSION", e.to_string());
    let sub = Submission::from_predictions(body.predictions, body.meta).map_err(|e| invalid(&e))?;
    let mut s = st.lock();
    let state = s.engine.state();
    if state.submissions.contains_key(&body.submission_id) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "ALREADY_EXISTS",
            format!("submission {} already exists", body.submission_id),
        ));
    }
    if state.fused.is_empty() {
        return Err(ApiError::new(StatusCode::CONFLICT, "NO_GROUND_TRUTH", "no clip has been fused yet"));
    }
    sub.validate_against(state.fused.keys()).map_err(|e| invalid(&e))?;
    let pool = platform::fused_pool(state);
    let (splits, _) = platform::variant_splits(&pool, s.cfg.evaluation.splits.as_deref());
    let frames: Vec<_> = state.fused.values().flatten().cloned().collect();
    let report = platform::score(&sub, &frames, &splits, s.cfg.evaluation.exact).map_err(|e| invalid(&e))?;
    s.engine.receive_submission(&body.submission_id, &sub)?;
    s.engine.record_scores(&body.submission_id, report.team_scores())?;
    s.snapshot();
    created(json!({ "submission_id": body.submission_id, "report": report }))
}

async fn metrics(State(st): State<AppState>) -> ApiResult {
    let s = st.lock();
    ok(platform::metrics(s.engine.state()))
}

async fn get_leaderboard(State(st): State<AppState>) -> ApiResult {
    let s = st.lock();
    ok(leaderboard(&platform::platform_scores(s.engine.state())))
}

async fn funnel(State(st): State<AppState>) -> ApiResult {
    let s = st.lock();
    ok(funnel_report(s.engine.state().annotators.values()))
}

/// Opens the platform and serves until interrupted.
pub async fn serve(cfg: OpsConfig) -> anyhow::Result<()> {
    let token = cfg
        .server
        .api_token
        .clone()
        .filter(|t| !t.is_empty())
        .ok_or_else(|| anyhow::anyhow!("server.api_token must be set (CVSOPS_SERVER__API_TOKEN)"))?;
    let (engine, report) = platform::open(&cfg, Arc::new(SystemClock), cfg.seed)?;
    tracing::info!(source = ?report.source, replayed = report.replayed, "platform restored");
    let notifier = crate::notify::bind(&cfg)?;
    let state = AppState::new(
        Service {
            cfg: cfg.clone(),
            engine,
            notifier,
        },
        token,
    );

    let poller = state.clone();
    let period = Duration::from_secs(cfg.server.effect_poll_secs.max(1));
    tokio::spawn(async move {
        let mut every = tokio::time::interval(period);
        loop {
            every.tick().await;
            let p = poller.clone();
            match tokio::task::spawn_blocking(move || p.poll_effects()).await {
                Ok(r) if !r.executed.is_empty() => tracing::info!(executed = r.executed.len(), "effects run"),
                Ok(_) => {}
                Err(e) => tracing::error!("effect poller: {e}"),
            }
        }
    });

    let listener = tokio::net::TcpListener::bind(&cfg.server.bind).await?;
    tracing::info!(bind = %cfg.server.bind, "listening");
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    state.lock().snapshot();
    Ok(())
}

/// Request headers for a mutation.
pub fn mutation_headers(token: &str, key: &str) -> HeaderMap {
    let mut h = HeaderMap::new();
    h.insert(header::AUTHORIZATION, HeaderValue::from_str(&format!("Bearer {token}")).expect("ascii token"));
    h.insert(IDEMPOTENCY_HEADER, HeaderValue::from_str(key).expect("ascii key"));
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    h
}
