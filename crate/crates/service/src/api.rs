//! Request routing. Transport-agnostic: the HTTP server and in-process
//! callers both go through [`Service::route`].

use std::sync::{Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use microcrowd_core::error::ErrorClass;
use microcrowd_core::model::{ProjectSpec, Timestamp};
use microcrowd_core::value::{self, Value};
use microcrowd_core::{
    Engine, EngineError, EventLog, MicrotaskId, ProjectId, Snapshot, StoreError, Submission, SubmissionBody, WorkerId,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ApiConfig, ClockMode};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiRequest {
    pub method: String,
    pub path: String,
    /// Bearer token, without the scheme.
    pub token: Option<String>,
    pub body: String,
}

impl ApiRequest {
    pub fn new(method: &str, path: &str, token: Option<&str>, body: impl Into<String>) -> Self {
        ApiRequest { method: method.to_string(), path: path.to_string(), token: token.map(str::to_string), body: body.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    /// Canonical JSON.
    pub body: String,
}

impl ApiResponse {
    fn json<T: Serialize + ?Sized>(status: u16, body: &T) -> Self {
        ApiResponse { status, body: value::to_canonical(body) }
    }

    pub fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        ApiResponse::json(status, &ErrorBody { error: code.to_string(), message: message.into() })
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// The `error` code of a failure body, if any.
    pub fn error_code(&self) -> Option<String> {
        Value::parse(&self.body).ok()?.get("error")?.as_str().map(str::to_string)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

fn status_of(class: ErrorClass) -> u16 {
    match class {
        ErrorClass::BadRequest => 400,
        ErrorClass::NotFound => 404,
        ErrorClass::Conflict => 409,
        ErrorClass::Unavailable => 503,
        ErrorClass::Internal => 500,
    }
}

impl From<EngineError> for ApiResponse {
    fn from(e: EngineError) -> Self {
        ApiResponse::error(status_of(e.class()), e.code(), e.to_string())
    }
}

/// The bearer token for `worker`, derived from the enrollment token it
/// registered with. The id prefix lets the server find the worker without
/// a table lookup.
pub fn worker_token(enroll_token: &str, worker: WorkerId) -> String {
    let digest = Sha256::digest(format!("{enroll_token}:{worker}").as_bytes());
    format!("{worker}.{}", hex::encode(digest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Client,
    Enroll,
    Worker(WorkerId),
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RegisterBody {
    #[serde(default)]
    handle: Option<String>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Registered {
    worker_id: WorkerId,
    token: String,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SubmitBody {
    #[serde(default)]
    worker_id: Option<WorkerId>,
    body: SubmissionBody,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SkipBody {
    #[serde(default)]
    worker_id: Option<WorkerId>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ClockBody {
    #[serde(default)]
    now: Option<Timestamp>,
    #[serde(default)]
    advance_millis: Option<u64>,
}

struct Inner {
    engine: Engine,
    manual_now: Timestamp,
    snapshot_seq: u64,
}

pub struct Service {
    config: ApiConfig,
    inner: Mutex<Inner>,
}

type Routed = Result<ApiResponse, ApiResponse>;

fn parse_body<T: DeserializeOwned>(body: &str) -> Result<T, ApiResponse> {
    value::from_canonical(body).map_err(|e| ApiResponse::error(400, "MalformedBody", e.to_string()))
}

/// Like [`parse_body`], but an empty body means the type's default.
fn parse_optional<T: DeserializeOwned + Default>(body: &str) -> Result<T, ApiResponse> {
    if body.trim().is_empty() {
        Ok(T::default())
    } else {
        parse_body(body)
    }
}

fn unauthorized() -> ApiResponse {
    ApiResponse::error(401, "Unauthorized", "missing or invalid bearer token")
}

fn id_or_404<T: std::str::FromStr>(raw: &str, code: &str) -> Result<T, ApiResponse> {
    raw.parse().map_err(|_| ApiResponse::error(404, code, format!("no such entity {raw}")))
}

impl Service {
    pub fn new(config: ApiConfig) -> Result<Service, ServiceError> {
        let engine_config = config.engine_config();
        let mut engine = match &config.log_path {
            None => Engine::new(engine_config),
            Some(path) => {
                let log = EventLog::open(path, config.fsync)?;
                match config.snapshot_path.as_deref().filter(|p| p.exists()) {
                    Some(snap) => Engine::open_with_snapshot(log, &Snapshot::load(snap)?, engine_config)?,
                    None => Engine::open(log, engine_config)?,
                }
            }
        };
        engine.set_lazy_reclaim(true);
        let snapshot_seq = engine.state().last_seq;
        let manual_now = config.manual_start_millis;
        Ok(Service { config, inner: Mutex::new(Inner { engine, manual_now, snapshot_seq }) })
    }

    pub fn config(&self) -> &ApiConfig {
        &self.config
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // a panic mid-request never leaves a half-applied commit behind,
        // so the state is still consistent
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Read access to the live engine.
    pub fn with_engine<R>(&self, f: impl FnOnce(&Engine) -> R) -> R {
        f(&self.lock().engine)
    }

    pub fn now(&self) -> Timestamp {
        let inner = self.lock();
        self.now_locked(&inner)
    }

    fn now_locked(&self, inner: &Inner) -> Timestamp {
        match self.config.clock_mode {
            ClockMode::Manual => inner.manual_now,
            ClockMode::System => SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
        }
    }

    /// Writes a snapshot of the current state if a snapshot path is set.
    pub fn write_snapshot(&self) -> Result<(), StoreError> {
        let mut inner = self.lock();
        self.snapshot_locked(&mut inner)
    }

    fn snapshot_locked(&self, inner: &mut Inner) -> Result<(), StoreError> {
        if let Some(path) = &self.config.snapshot_path {
            Snapshot::of(inner.engine.state()).save(path)?;
            inner.snapshot_seq = inner.engine.state().last_seq;
        }
        Ok(())
    }

    fn role(&self, token: Option<&str>, inner: &Inner) -> Option<Role> {
        let token = token?;
        let tokens = &self.config.auth_tokens;
        if tokens.client.iter().any(|t| t == token) {
            return Some(Role::Client);
        }
        if tokens.worker.iter().any(|t| t == token) {
            return Some(Role::Enroll);
        }
        let (id, _) = token.split_once('.')?;
        let worker: WorkerId = id.parse().ok()?;
        if !inner.engine.state().workers.contains_key(&worker) {
            return None;
        }
        tokens.worker.iter().any(|e| worker_token(e, worker) == token).then_some(Role::Worker(worker))
    }

    pub fn route(&self, req: &ApiRequest) -> ApiResponse {
        let mut inner = self.lock();
        let before = inner.engine.state().last_seq;
        let response = self.dispatch(req, &mut inner).unwrap_or_else(|e| e);
        let after = inner.engine.state().last_seq;
        if after > before && self.config.snapshot_every > 0 && after - inner.snapshot_seq >= self.config.snapshot_every {
            if let Err(e) = self.snapshot_locked(&mut inner) {
                // the commit itself is durable; a missed snapshot only costs replay time
                eprintln!("snapshot failed: {e}");
            }
        }
        response
    }

    fn dispatch(&self, req: &ApiRequest, inner: &mut Inner) -> Routed {
        let path = req.path.split('?').next().unwrap_or("");
        let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
        let role = self.role(req.token.as_deref(), inner);
        let now = self.now_locked(inner);
        let engine = &mut inner.engine;

        let any_role = || role.ok_or_else(unauthorized);
        let client = || match role {
            Some(Role::Client) => Ok(()),
            _ => Err(unauthorized()),
        };
        let as_worker = |claimed: Option<WorkerId>| match (role, claimed) {
            (Some(Role::Worker(w)), None) => Ok(w),
            (Some(Role::Worker(w)), Some(c)) if c == w => Ok(w),
            _ => Err(unauthorized()),
        };

        match (req.method.as_str(), segments.as_slice()) {
            ("POST", ["projects"]) => {
                client()?;
                let spec: ProjectSpec = parse_body(&req.body)?;
                let project_id = engine.create_project(spec, now)?;
                Ok(ApiResponse::json(201, &Value::object([("projectId", Value::str(project_id.to_string()))])))
            }
            ("GET", ["projects", id, "status"]) => {
                any_role()?;
                let project: ProjectId = id_or_404(id, "UnknownProject")?;
                let report = engine.status(project).ok_or(EngineError::UnknownProject(project.to_string()))?;
                Ok(ApiResponse::json(200, &report))
            }
            ("GET", ["projects", id, "bundle"]) => {
                any_role()?;
                let project: ProjectId = id_or_404(id, "UnknownProject")?;
                Ok(ApiResponse { status: 200, body: engine.build_bundle(project)?.to_canonical() })
            }
            ("GET", ["metrics", id]) => {
                any_role()?;
                let project: ProjectId = id_or_404(id, "UnknownProject")?;
                if !engine.state().projects.contains_key(&project) {
                    return Err(EngineError::UnknownProject(project.to_string()).into());
                }
                Ok(ApiResponse::json(200, &engine.metrics(project)))
            }
            ("POST", ["workers"]) => {
                if role != Some(Role::Enroll) {
                    return Err(unauthorized());
                }
                let enroll = req.token.as_deref().unwrap_or_default();
                let body: RegisterBody = parse_optional(&req.body)?;
                let worker_id = engine.register_worker(body.handle.as_deref().unwrap_or("worker"), now)?;
                Ok(ApiResponse::json(201, &Registered { worker_id, token: worker_token(enroll, worker_id) }))
            }
            ("POST", ["workers", id, "fetch"]) => {
                let worker: WorkerId = id_or_404(id, "UnknownWorker")?;
                as_worker(Some(worker))?;
                match engine.fetch_next(worker, now)? {
                    None => Ok(ApiResponse::json(200, &Value::object([("noWork", Value::Bool(true))]))),
                    Some(a) => {
                        let view = engine
                            .microtask_view(a.microtask_id)
                            .ok_or_else(|| EngineError::Internal(format!("assigned {} has no view", a.microtask_id)))?;
                        Ok(ApiResponse::json(200, &view))
                    }
                }
            }
            ("POST", ["microtasks", id, "submit"]) => {
                let microtask: MicrotaskId = id_or_404(id, "UnknownMicrotask")?;
                let body: SubmitBody = parse_body(&req.body)?;
                let worker = as_worker(body.worker_id)?;
                let result =
                    engine.apply_submission(Submission { microtask_id: microtask, worker_id: worker, body: body.body }, now)?;
                Ok(ApiResponse::json(200, &result))
            }
            ("POST", ["microtasks", id, "skip"]) => {
                let microtask: MicrotaskId = id_or_404(id, "UnknownMicrotask")?;
                let body: SkipBody = parse_optional(&req.body)?;
                let worker = as_worker(body.worker_id)?;
                Ok(ApiResponse::json(200, &engine.skip(worker, microtask, now)?))
            }
            ("POST", ["clock"]) if self.config.clock_mode == ClockMode::Manual => {
                client()?;
                let body: ClockBody = parse_body(&req.body)?;
                let target = match (body.now, body.advance_millis) {
                    (Some(t), None) => t,
                    (None, Some(d)) => inner.manual_now + d,
                    _ => return Err(ApiResponse::error(400, "MalformedBody", "give exactly one of now, advanceMillis")),
                };
                if target < inner.manual_now {
                    return Err(ApiResponse::error(400, "ClockRewind", "the manual clock only moves forward"));
                }
                inner.manual_now = target;
                Ok(ApiResponse::json(200, &Value::object([("now", Value::int(target as i64))])))
            }
            _ => Err(ApiResponse::error(404, "UnknownRoute", format!("{} {}", req.method, req.path))),
        }
    }
}
