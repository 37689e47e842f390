//! The `/v1` REST surface. Handlers authenticate the caller's bearer token
//! and delegate with that token; the gateway never acts on user data under
//! its own identity.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::{Body, Bytes};
use axum::extract::{FromRequestParts, Path, Query, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use enclave_core::jobqueue::{JobDescription, JobEventKind, JobRecord, JobState};
use enclave_core::security::{Action, AuditFilter, Outcome, TokenId};
use enclave_core::storage::{Page, SignedUrl, StoredObject};
use enclave_core::{JobId, ServiceId, SimDuration, SimTime, UserId};
use enclave_harness::{ExperimentConfig, PoolSample};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::service::{Clock, ExperimentRecord, Service};
use crate::templates::{Param, Template};

pub const PAGE_SIZE: usize = 100;
pub const REQUEST_ID: &str = "x-request-id";

#[derive(Clone)]
pub struct AppState {
    svc: Arc<Mutex<Service>>,
    clock: Arc<dyn Clock>,
}

impl AppState {
    pub fn new(svc: Service, clock: Arc<dyn Clock>) -> Self {
        AppState { svc: Arc::new(Mutex::new(svc)), clock }
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn lock(&self) -> MutexGuard<'_, Service> {
        // a panicked handler leaves the platform state usable
        self.svc.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs one worker round at the current time.
    pub fn pump(&self) {
        let now = self.now();
        self.lock().pump(now);
    }
}

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/login", post(login))
        .route("/whoami", get(whoami))
        .route("/buckets", get(list_buckets))
        .route("/objects/{bucket}", get(list_objects))
        .route("/objects/{bucket}/{*key}", get(get_object).put(put_object).post(sign_object))
        .route("/fetch", get(fetch))
        .route("/jobs", get(list_jobs).post(submit_job))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/logs", get(job_logs))
        .route("/pool", get(pool_status))
        .route("/pool/timeline", get(pool_timeline))
        .route("/templates", get(list_templates))
        .route("/templates/{name}", get(get_template).put(put_template))
        .route("/templates/{name}/jobs", post(submit_template))
        .route("/audit", get(export_audit))
        .route("/experiments", get(list_experiments).post(run_experiment))
        .route("/experiments/{id}", get(get_experiment));
    Router::new()
        .nest("/v1", v1)
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(middleware::from_fn(request_id))
        .with_state(state)
}

fn valid_request_id(s: &str) -> bool {
    !s.is_empty() && s.len() <= 128 && s.bytes().all(|b| b.is_ascii_graphic())
}

/// Echoes a well-formed client request id, otherwise mints one.
async fn request_id(req: Request, next: Next) -> Response {
    let id = req
        .headers()
        .get(REQUEST_ID)
        .and_then(|v| v.to_str().ok())
        .filter(|s| valid_request_id(s))
        .map(str::to_owned)
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let mut resp = next.run(req).await;
    if let Ok(v) = HeaderValue::from_str(&id) {
        resp.headers_mut().insert(REQUEST_ID, v);
    }
    resp
}

/// An authenticated caller.
pub struct Caller {
    pub token: TokenId,
    /// The end user the token acts for, if any.
    pub user: Option<UserId>,
    pub principal: String,
    pub expires_at: SimTime,
}

impl Caller {
    fn require_user(&self) -> Result<&UserId, ApiError> {
        self.user.as_ref().ok_or_else(ApiError::forbidden)
    }
}

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let raw = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ApiError::unauthorized("missing bearer token"))?;
        let token = TokenId(raw.to_owned());
        let now = state.now();
        let svc = state.lock();
        let sec = &svc.enclave.security;
        let tok = sec.validate(&token, now).map_err(|e| ApiError::unauthorized(e.to_string()))?;
        let expires_at = tok.expiry;
        let principal = tok.subject.to_string();
        let user = sec.effective_user(&token);
        Ok(Caller { token, user, principal, expires_at })
    }
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(e.to_string()))
}

fn clamp_limit(limit: Option<usize>) -> usize {
    limit.unwrap_or(PAGE_SIZE).clamp(1, PAGE_SIZE)
}

fn parse_time(s: &str) -> Result<SimTime, ApiError> {
    if let Ok(ms) = s.parse::<i64>() {
        return Ok(SimTime(ms));
    }
    SimTime::parse_iso8601(s).map_err(|e| ApiError::bad_request(format!("bad time {s:?}: {e}")))
}

// ------------------------------------------------------------------ auth

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoginRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub principal: String,
    pub expires_at: SimTime,
}

async fn login(State(st): State<AppState>, body: Bytes) -> Result<Json<LoginResponse>, ApiError> {
    let req: LoginRequest = parse_json(&body)?;
    let now = st.now();
    let mut svc = st.lock();
    let sec = &mut svc.enclave.security;
    let tok = match (req.user, req.service) {
        (Some(u), None) => sec.login(&UserId::from(u), now)?,
        (None, Some(s)) => sec.login_service(&ServiceId::from(s), req.secret.as_deref().unwrap_or(""), now)?,
        _ => return Err(ApiError::invalid("give exactly one of user or service")),
    };
    Ok(Json(LoginResponse { token: tok.id.0, principal: tok.subject.to_string(), expires_at: tok.expiry }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhoAmI {
    pub principal: String,
    pub user: Option<UserId>,
    pub expires_at: SimTime,
}

async fn whoami(caller: Caller) -> Json<WhoAmI> {
    Json(WhoAmI { principal: caller.principal, user: caller.user, expires_at: caller.expires_at })
}

// --------------------------------------------------------------- objects

async fn list_buckets(State(st): State<AppState>, _caller: Caller) -> Json<Vec<String>> {
    Json(st.lock().enclave.store.buckets().map(|b| b.name.clone()).collect())
}

#[derive(Debug, Default, Deserialize)]
struct ListQuery {
    prefix: Option<String>,
    cursor: Option<String>,
    limit: Option<usize>,
}

async fn list_objects(
    State(st): State<AppState>,
    caller: Caller,
    Path(bucket): Path<String>,
    Query(q): Query<ListQuery>,
) -> Result<Json<Page>, ApiError> {
    let now = st.now();
    let mut svc = st.lock();
    let enc = &mut svc.enclave;
    let page = enc.store.list(
        &mut enc.security,
        &bucket,
        q.prefix.as_deref().unwrap_or(""),
        &caller.token,
        q.cursor.as_deref(),
        clamp_limit(q.limit),
        now,
    )?;
    Ok(Json(page))
}

#[derive(Debug, Default, Deserialize)]
struct PutQuery {
    #[serde(default)]
    private: bool,
}

async fn put_object(
    State(st): State<AppState>,
    caller: Caller,
    Path((bucket, key)): Path<(String, String)>,
    Query(q): Query<PutQuery>,
    body: Bytes,
) -> Result<(StatusCode, Json<StoredObject>), ApiError> {
    let owner = caller.require_user()?.clone();
    let now = st.now();
    let mut svc = st.lock();
    let enc = &mut svc.enclave;
    let obj = enc.store.put_bytes(&mut enc.security, &bucket, &key, &body, &owner, q.private, &caller.token, now)?;
    Ok((StatusCode::CREATED, Json(obj)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorePending {
    pub status: String,
    pub tier: String,
    pub available_at: SimTime,
}

fn bytes_response(obj_tier: &str, bytes: Option<Vec<u8>>) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert("x-object-tier", HeaderValue::from_str(obj_tier).unwrap_or(HeaderValue::from_static("unknown")));
    match bytes {
        Some(b) => {
            headers.insert(CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
            (StatusCode::OK, headers, Body::from(b)).into_response()
        }
        // metadata-only objects, such as simulated job outputs
        None => (StatusCode::NO_CONTENT, headers).into_response(),
    }
}

async fn get_object(
    State(st): State<AppState>,
    caller: Caller,
    Path((bucket, key)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let now = st.now();
    let mut svc = st.lock();
    let enc = &mut svc.enclave;
    let (receipt, bytes) = enc.store.read_bytes(&mut enc.security, &bucket, &key, &caller.token, now)?;
    if receipt.available_at > now {
        let body = RestorePending {
            status: "restoring".into(),
            tier: receipt.tier.to_string(),
            available_at: receipt.available_at,
        };
        return Ok((StatusCode::ACCEPTED, Json(body)).into_response());
    }
    Ok(bytes_response(receipt.tier.as_str(), bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignRequest {
    pub ttl_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignResponse {
    pub url: String,
    pub expires_at: SimTime,
}

/// `POST /objects/{bucket}/{key}/sign`.
async fn sign_object(
    State(st): State<AppState>,
    caller: Caller,
    Path((bucket, rest)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<SignResponse>, ApiError> {
    let key = rest.strip_suffix("/sign").ok_or_else(|| ApiError::not_found("no such endpoint"))?;
    let req: SignRequest = parse_json(&body)?;
    let ttl = i64::try_from(req.ttl_secs)
        .ok()
        .and_then(|s| s.checked_mul(1000))
        .map(SimDuration)
        .filter(|d| d.is_positive())
        .ok_or_else(|| ApiError::invalid("ttl_secs must be positive"))?;
    let now = st.now();
    let mut svc = st.lock();
    let enc = &mut svc.enclave;
    let url = enc.store.sign_url(&mut enc.security, &bucket, key, ttl, &caller.token, now)?;
    Ok(Json(SignResponse { expires_at: url.expires_at(), url: url.to_string() }))
}

#[derive(Debug, Deserialize)]
struct FetchQuery {
    url: String,
}

/// Anonymous download through a signed URL.
async fn fetch(State(st): State<AppState>, Query(q): Query<FetchQuery>) -> Result<Response, ApiError> {
    let url = SignedUrl::parse(&q.url)?;
    let now = st.now();
    let mut svc = st.lock();
    let enc = &mut svc.enclave;
    let (obj, bytes) = enc.store.fetch_bytes(&mut enc.security, &url, now)?;
    Ok(bytes_response(obj.tier.as_str(), bytes))
}

// ------------------------------------------------------------------ jobs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub id: String,
    pub owner: UserId,
    pub queue: String,
    pub state: JobState,
    pub requeues: u32,
    pub submit_time: SimTime,
    pub claim_time: Option<SimTime>,
    pub end_time: Option<SimTime>,
    pub wait_secs: Option<f64>,
    pub stage_secs: Option<f64>,
    pub exec_secs: Option<f64>,
}

impl From<&JobRecord> for JobSummary {
    fn from(r: &JobRecord) -> Self {
        let secs = |a: Option<SimTime>, b: Option<SimTime>| match (a, b) {
            (Some(a), Some(b)) => Some((b - a).as_secs_f64()),
            _ => None,
        };
        JobSummary {
            id: r.id.to_string(),
            owner: r.owner().clone(),
            queue: r.queue().to_string(),
            state: r.state,
            requeues: r.requeues,
            submit_time: r.submit_time,
            claim_time: r.claim_time,
            end_time: r.end_time,
            wait_secs: secs(Some(r.submit_time), r.first_claim_time()),
            stage_secs: secs(r.claim_time, r.stage_done_time),
            exec_secs: secs(r.stage_done_time, r.end_time),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobPage {
    pub items: Vec<JobSummary>,
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submitted {
    pub id: String,
    pub state: JobState,
    pub submit_time: SimTime,
}

fn job_resource(r: &JobRecord) -> String {
    format!("{}/{}", r.queue().resource(), r.id)
}

fn submit(st: &AppState, caller: &Caller, desc: JobDescription) -> Result<(StatusCode, Json<Submitted>), ApiError> {
    let now = st.now();
    let mut svc = st.lock();
    let enc = &mut svc.enclave;
    let (rec, _) = enc.queue.submit(&mut enc.security, desc, &caller.token, now)?;
    Ok((StatusCode::CREATED, Json(Submitted { id: rec.id.to_string(), state: rec.state, submit_time: rec.submit_time })))
}

async fn submit_job(State(st): State<AppState>, caller: Caller, body: Bytes) -> Result<(StatusCode, Json<Submitted>), ApiError> {
    let desc: JobDescription = parse_json(&body)?;
    submit(&st, &caller, desc)
}

#[derive(Debug, Default, Deserialize)]
struct JobListQuery {
    cursor: Option<String>,
    limit: Option<usize>,
    state: Option<JobState>,
}

fn parse_job_id(s: &str) -> Result<JobId, ApiError> {
    s.parse().map_err(|_| ApiError::not_found(format!("unknown job {s}")))
}

/// Jobs the caller may read, oldest first.
async fn list_jobs(State(st): State<AppState>, caller: Caller, Query(q): Query<JobListQuery>) -> Result<Json<JobPage>, ApiError> {
    let after = q.cursor.as_deref().map(parse_job_id).transpose()?;
    let limit = clamp_limit(q.limit);
    let now = st.now();
    let mut svc = st.lock();
    let enc = &mut svc.enclave;
    let sec = &enc.security;
    let mut items: Vec<JobSummary> = enc
        .queue
        .jobs()
        .filter(|r| after.is_none_or(|a| r.id > a))
        .filter(|r| q.state.is_none_or(|s| r.state == s))
        .filter(|r| sec.evaluate(&caller.token, Action::Read, &job_resource(r), Some(r.owner()), now).allowed)
        .take(limit + 1)
        .map(JobSummary::from)
        .collect();
    let next_cursor = if items.len() > limit {
        items.truncate(limit);
        items.last().map(|j| j.id.clone())
    } else {
        None
    };
    let actor = enc.security.actor_of(&caller.token);
    enc.security.record(now, actor, "list", "jobs", Outcome::Allowed);
    Ok(Json(JobPage { items, next_cursor }))
}

fn readable_job(st: &AppState, caller: &Caller, id: &str) -> Result<JobRecord, ApiError> {
    let id = parse_job_id(id)?;
    let now = st.now();
    let mut svc = st.lock();
    let enc = &mut svc.enclave;
    let rec = enc.queue.job(id).ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))?.clone();
    let d = enc.security.check_access_owned(&caller.token, Action::Read, &job_resource(&rec), Some(rec.owner()), now);
    if !d.allowed {
        return Err(ApiError::forbidden());
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    #[serde(flatten)]
    pub summary: JobSummary,
    pub record: JobRecord,
}

async fn get_job(State(st): State<AppState>, caller: Caller, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    let rec = readable_job(&st, &caller, &id)?;
    Ok(Json(JobView { summary: JobSummary::from(&rec), record: rec }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobLogs {
    pub id: String,
    pub lines: Vec<String>,
}

fn event_text(kind: &JobEventKind) -> String {
    match kind {
        JobEventKind::Submitted => "submitted".into(),
        JobEventKind::Claimed { worker, instance } => format!("claimed by {worker} on {instance}"),
        JobEventKind::Staged => "inputs staged".into(),
        JobEventKind::Requeued { reason } => format!("requeued ({reason:?})"),
        JobEventKind::Completed => "completed".into(),
        JobEventKind::Failed { reason } => format!("failed ({reason:?})"),
    }
}

/// Lifecycle events and status markers, merged in time order.
async fn job_logs(State(st): State<AppState>, caller: Caller, Path(id): Path<String>) -> Result<Json<JobLogs>, ApiError> {
    let rec = readable_job(&st, &caller, &id)?;
    let mut lines: Vec<(SimTime, u8, String)> = rec.history.iter().map(|e| (e.time, 0, event_text(&e.kind))).collect();
    lines.extend(rec.markers.iter().map(|m| {
        let text = format!("cpu {:.2} ram {:.2} io {:.2} {}", m.cpu_util, m.ram_util, m.io_util, m.progress);
        (m.time, 1, text)
    }));
    lines.sort_by_key(|l| (l.0, l.1));
    let lines = lines.into_iter().map(|(t, _, s)| format!("{} {s}", t.to_iso8601())).collect();
    Ok(Json(JobLogs { id: rec.id.to_string(), lines }))
}

// ------------------------------------------------------------------ pool

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolStatus {
    pub workers: Vec<WorkerStatus>,
    pub jobs: BTreeMap<JobState, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerStatus {
    pub id: ServiceId,
    pub pool: String,
    pub current: Option<String>,
}

async fn pool_status(State(st): State<AppState>, _caller: Caller) -> Json<PoolStatus> {
    let svc = st.lock();
    let q = &svc.enclave.queue;
    let workers = q
        .workers()
        .map(|w| WorkerStatus { id: w.id.clone(), pool: w.pool.to_string(), current: w.current.map(|j| j.to_string()) })
        .collect();
    Json(PoolStatus { workers, jobs: q.counts() })
}

#[derive(Debug, Default, Deserialize)]
struct TimelineQuery {
    experiment: Option<u64>,
    strategy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub experiment: u64,
    pub strategy: String,
    pub samples: Vec<PoolSample>,
}

/// Provisioned and idle counts over time from a recorded scaling run.
async fn pool_timeline(State(st): State<AppState>, _caller: Caller, Query(q): Query<TimelineQuery>) -> Result<Json<Timeline>, ApiError> {
    let svc = st.lock();
    let rec = match q.experiment {
        Some(id) => svc.experiments.get(&id),
        None => svc.experiments.values().rev().find(|e| e.outputs.scaling.is_some()),
    }
    .ok_or_else(|| ApiError::not_found("no recorded scaling run"))?;
    let scaling = rec.outputs.scaling.as_ref().ok_or_else(|| ApiError::not_found("experiment has no scaling run"))?;
    let run = match &q.strategy {
        Some(s) => scaling.run(s),
        None => scaling.run("unlimited").or(scaling.runs.first()),
    }
    .ok_or_else(|| ApiError::not_found("no such strategy in the run"))?;
    Ok(Json(Timeline { experiment: rec.id, strategy: run.strategy.clone(), samples: run.timeline.clone() }))
}

// ------------------------------------------------------------- templates

async fn list_templates(State(st): State<AppState>, _caller: Caller) -> Json<Vec<Template>> {
    Json(st.lock().templates.values().cloned().collect())
}

async fn get_template(State(st): State<AppState>, _caller: Caller, Path(name): Path<String>) -> Result<Json<Template>, ApiError> {
    st.lock().templates.get(&name).cloned().map(Json).ok_or_else(|| ApiError::not_found(format!("unknown template {name}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateBody {
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub params: BTreeMap<String, Param>,
    pub description: serde_json::Value,
}

/// Creates or replaces a template; only its creator may replace it.
async fn put_template(
    State(st): State<AppState>,
    caller: Caller,
    Path(name): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<Template>), ApiError> {
    let b: TemplateBody = parse_json(&body)?;
    let t = Template {
        name: name.clone(),
        summary: b.summary,
        params: b.params,
        description: b.description,
        created_by: Some(caller.principal.clone()),
    };
    t.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
    let mut svc = st.lock();
    let status = match svc.templates.get(&name) {
        Some(old) if old.created_by.as_ref() != Some(&caller.principal) => return Err(ApiError::forbidden()),
        Some(_) => StatusCode::OK,
        None => StatusCode::CREATED,
    };
    svc.templates.insert(name, t.clone());
    Ok((status, Json(t)))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSubmit {
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

async fn submit_template(
    State(st): State<AppState>,
    caller: Caller,
    Path(name): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<Submitted>), ApiError> {
    let req: TemplateSubmit = if body.is_empty() { TemplateSubmit::default() } else { parse_json(&body)? };
    let owner = caller.require_user()?.to_string();
    let tpl = st.lock().templates.get(&name).cloned().ok_or_else(|| ApiError::not_found(format!("unknown template {name}")))?;
    let desc = tpl.instantiate(&owner, &req.params).map_err(|e| ApiError::invalid(e.to_string()))?;
    submit(&st, &caller, desc)
}

// ----------------------------------------------------------------- audit

#[derive(Debug, Default, Deserialize)]
struct AuditQuery {
    dataset: Option<String>,
    user: Option<String>,
    service: Option<String>,
    from: Option<String>,
    to: Option<String>,
    /// `lines` gives the pipe-delimited record form; default is NDJSON.
    format: Option<String>,
}

/// Admin-only export.
async fn export_audit(State(st): State<AppState>, caller: Caller, Query(q): Query<AuditQuery>) -> Result<Response, ApiError> {
    let filter = AuditFilter {
        dataset: q.dataset,
        user: q.user.map(UserId::from),
        service: q.service.map(ServiceId::from),
        from: q.from.as_deref().map(parse_time).transpose()?,
        to: q.to.as_deref().map(parse_time).transpose()?,
    };
    let now = st.now();
    let lines = match q.format.as_deref() {
        None | Some("ndjson") => false,
        Some("lines") => true,
        Some(other) => return Err(ApiError::bad_request(format!("unknown audit format {other:?}"))),
    };
    let records = st.lock().enclave.security.export_audit(&caller.token, &filter, now)?;
    let mut body = String::new();
    if lines {
        for r in &records {
            body.push_str(&r.to_line());
            body.push('\n');
        }
        return Ok(([(CONTENT_TYPE, "text/plain; charset=utf-8")], body).into_response());
    }
    for r in &records {
        body.push_str(&serde_json::to_string(r).map_err(|e| ApiError::internal(e.to_string()))?);
        body.push('\n');
    }
    Ok(([(CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

// ----------------------------------------------------------- experiments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub id: u64,
    pub submitted_by: String,
    pub submitted_at: SimTime,
    pub finished_at: SimTime,
    pub sections: Vec<String>,
}

impl From<&ExperimentRecord> for ExperimentSummary {
    fn from(r: &ExperimentRecord) -> Self {
        let o = &r.outputs;
        let sections = [("scaling", o.scaling.is_some()), ("throughput", o.throughput.is_some()), ("cost_aware", o.cost_aware.is_some())]
            .into_iter()
            .filter(|(_, present)| *present)
            .map(|(n, _)| n.to_owned())
            .collect();
        ExperimentSummary {
            id: r.id,
            submitted_by: r.submitted_by.clone(),
            submitted_at: r.submitted_at,
            finished_at: r.finished_at,
            sections,
        }
    }
}

/// Body is an experiment config, as TOML when the content type says so and
/// JSON otherwise. Trace file paths resolve on the server.
async fn run_experiment(
    State(st): State<AppState>,
    caller: Caller,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<ExperimentRecord>), ApiError> {
    let is_toml = headers.get(CONTENT_TYPE).and_then(|v| v.to_str().ok()).is_some_and(|v| v.contains("toml"));
    let cfg: ExperimentConfig = if is_toml {
        let text = std::str::from_utf8(&body).map_err(|e| ApiError::invalid(e.to_string()))?;
        ExperimentConfig::from_toml_str(text)?
    } else {
        parse_json(&body)?
    };
    let submitted_at = st.now();
    let outputs = tokio::task::spawn_blocking(move || cfg.run())
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let now = st.now();
    let mut svc = st.lock();
    let id = svc.record_experiment(&caller.principal, submitted_at, now, outputs);
    Ok((StatusCode::CREATED, Json(svc.experiments[&id].clone())))
}

async fn list_experiments(State(st): State<AppState>, _caller: Caller) -> Json<Vec<ExperimentSummary>> {
    Json(st.lock().experiments.values().map(ExperimentSummary::from).collect())
}

async fn get_experiment(State(st): State<AppState>, _caller: Caller, Path(id): Path<u64>) -> Result<Json<ExperimentRecord>, ApiError> {
    st.lock().experiments.get(&id).cloned().map(Json).ok_or_else(|| ApiError::not_found(format!("unknown experiment {id}")))
}
