//! Runs a scenario against a fresh service instance in virtual time.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use microcrowd_core::event::EventBody;
use microcrowd_core::metrics::MetricsReport;
use microcrowd_core::model::{MicrotaskKind, Timestamp};
use microcrowd_core::status::{AttentionEntry, StatusReport};
use microcrowd_core::view::MicrotaskView;
use microcrowd_core::{value, FsyncPolicy, ProjectId, SubmitResult, Value, WorkerId};
use microcrowd_service::{ApiConfig, AuthTokens, ClockMode, HttpServer, Service};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::{expect_ok, Transport};
use crate::scenario::Scenario;
use crate::worker::respond;
use crate::SimError;

pub const CLIENT_TOKEN: &str = "sim-client";
pub const ENROLL_TOKEN: &str = "sim-enroll";

/// How long an idle worker waits before polling again.
pub const POLL_MILLIS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    /// Every worker found no work and nothing was in flight.
    NonConvergent,
    StepLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Wire {
    #[default]
    Http,
    /// Hands requests straight to the router; same code path minus sockets.
    Direct,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub wire: Wire,
    /// Where the event log, report and bundle go. None keeps the log in memory.
    pub out_dir: Option<PathBuf>,
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimReport {
    pub outcome: Outcome,
    pub scenario: String,
    pub seed: u64,
    /// Microtasks created during the run.
    pub total_microtasks: u64,
    pub counts_by_kind: BTreeMap<MicrotaskKind, u64>,
    pub debug_tasks: u64,
    pub conflicts_opened: u64,
    pub conflicts_resolved: u64,
    /// Assignments handed out.
    pub wall_steps: u64,
    pub virtual_millis: Timestamp,
    pub functions: u64,
    pub tests_written: u64,
    pub rejected_submissions: u64,
    pub metrics_from_service: MetricsReport,
    pub event_log_path: Option<String>,
    pub bundle_hash: Option<String>,
    pub stuck: Vec<AttentionEntry>,
    pub flagged: Vec<AttentionEntry>,
}

impl SimReport {
    pub fn to_canonical(&self) -> String {
        value::to_canonical(self)
    }
}

pub struct SimRun {
    pub report: SimReport,
    pub project_id: ProjectId,
    /// The service the crowd talked to, for inspection after the run.
    pub service: Arc<Service>,
}

struct Held {
    view: MicrotaskView,
    skip: bool,
}

struct SimWorker {
    id: WorkerId,
    token: String,
    model: usize,
    next_at: Timestamp,
    held: Option<Held>,
}

pub fn service_config(scenario: &Scenario, log_path: Option<PathBuf>) -> ApiConfig {
    ApiConfig {
        listen_address: "127.0.0.1:0".into(),
        auth_tokens: AuthTokens { client: vec![CLIENT_TOKEN.into()], worker: vec![ENROLL_TOKEN.into()] },
        scheduler: scenario.scheduler.clone(),
        log_path,
        // a run is reproducible from its seed; durability buys nothing here
        fsync: FsyncPolicy::Never,
        clock_mode: ClockMode::Manual,
        manual_start_millis: 0,
        http_threads: 1,
        ..ApiConfig::default()
    }
}

fn prepare_out_dir(dir: &Path) -> Result<PathBuf, SimError> {
    std::fs::create_dir_all(dir)?;
    let log = dir.join("events.log");
    if log.exists() {
        std::fs::remove_file(&log)?;
    }
    Ok(log)
}

pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<SimRun, SimError> {
    scenario.validate()?;
    let seed = options.seed.unwrap_or(scenario.seed);
    if seed > crate::scenario::MAX_SEED {
        return Err(SimError::InvalidScenario(format!("seed must be at most {}", crate::scenario::MAX_SEED)));
    }
    let log_path = options.out_dir.as_deref().map(prepare_out_dir).transpose()?;
    let service = Arc::new(
        Service::new(service_config(scenario, log_path.clone())).map_err(|e| SimError::ServiceUnreachable(e.to_string()))?,
    );

    let server = match options.wire {
        Wire::Http => Some(
            HttpServer::start(Arc::clone(&service), "127.0.0.1:0", 1)
                .map_err(|e| SimError::ServiceUnreachable(e.to_string()))?,
        ),
        Wire::Direct => None,
    };
    let transport = match &server {
        Some(s) => Transport::http(s.base_url()),
        None => Transport::Direct(Arc::clone(&service)),
    };

    let result = drive(scenario, seed, &transport)
        .and_then(|driven| build_report(scenario, seed, &transport, &service, driven, log_path.as_deref()));
    if let Some(s) = server {
        s.shutdown();
    }
    let (report, project_id, bundle) = result?;
    if let Some(dir) = &options.out_dir {
        std::fs::write(dir.join("report.json"), report.to_canonical())?;
        if let Some(bundle) = bundle {
            std::fs::write(dir.join("bundle.json"), bundle)?;
        }
    }
    Ok(SimRun { report, project_id, service })
}

type Driven = (Outcome, ProjectId, u64, u64, Timestamp);

fn drive(scenario: &Scenario, seed: u64, wire: &Transport) -> Result<Driven, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let created = expect_ok("create project", wire.post("/projects", CLIENT_TOKEN, &scenario.project_spec)?)?;
    let project_id: ProjectId = created
        .parse::<Value>()?
        .get("projectId")
        .and_then(Value::as_str)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| SimError::Protocol(format!("bad project reply {}", created.body)))?;

    let mut workers = Vec::new();
    for (model, m) in scenario.worker_models.iter().enumerate() {
        for _ in 0..m.count {
            let handle = format!("sim-{}", workers.len() + 1);
            let body = Value::object([("handle", Value::str(handle))]);
            let r = expect_ok("register worker", wire.post("/workers", ENROLL_TOKEN, &body)?)?.parse::<Value>()?;
            let id = r.get("workerId").and_then(Value::as_str).and_then(|s| s.parse().ok());
            let token = r.get("token").and_then(Value::as_str);
            let (Some(id), Some(token)) = (id, token) else {
                return Err(SimError::Protocol("bad registration reply".into()));
            };
            workers.push(SimWorker { id, token: token.to_string(), model, next_at: 0, held: None });
        }
    }

    let max_steps = scenario.effective_max_steps();
    let mut now: Timestamp = 0;
    let mut steps = 0u64;
    let mut rejected = 0u64;
    // workers that found nothing to do since the last change of state
    let mut idle: BTreeSet<usize> = BTreeSet::new();

    let outcome = loop {
        let w = (0..workers.len()).min_by_key(|&i| (workers[i].next_at, i)).expect("at least one worker");
        if workers[w].next_at > now {
            now = workers[w].next_at;
            expect_ok("advance clock", wire.post("/clock", CLIENT_TOKEN, &Value::object([("now", Value::int(now as i64))]))?)?;
        }
        let model = &scenario.worker_models[workers[w].model];

        if let Some(held) = workers[w].held.take() {
            let task = format!("/microtasks/{}", held.view.microtask_id);
            let worker_ref = Value::object([("workerId", Value::str(workers[w].id.to_string()))]);
            if held.skip {
                if wire.post(&format!("{task}/skip"), &workers[w].token, &worker_ref)?.is_success() {
                    idle.clear();
                }
            } else {
                let accurate = rng.gen_bool(model.accuracy_p);
                let body = respond(scenario, &held.view, accurate, &mut rng)?;
                let payload = Value::object([
                    ("workerId", Value::str(workers[w].id.to_string())),
                    ("body", value::to_value(&body)),
                ]);
                let reply = wire.post(&format!("{task}/submit"), &workers[w].token, &payload)?;
                if reply.is_success() {
                    idle.clear();
                    let result: SubmitResult = reply.parse()?;
                    if result.project_completed {
                        break Outcome::Completed;
                    }
                } else if reply.status >= 500 {
                    return Err(SimError::Protocol(format!("submit failed with {}: {}", reply.status, reply.body)));
                } else {
                    rejected += 1;
                    let code = reply.error_code().unwrap_or_default();
                    // lost the lease or the task moved on; otherwise hand it back
                    if !matches!(code.as_str(), "NotAssignee" | "StaleMicrotask" | "UnknownMicrotask")
                        && wire.post(&format!("{task}/skip"), &workers[w].token, &worker_ref)?.is_success()
                    {
                        idle.clear();
                    }
                }
            }
        }

        if steps >= max_steps {
            break Outcome::StepLimit;
        }
        let fetched = expect_ok(
            "fetch",
            wire.post(&format!("/workers/{}/fetch", workers[w].id), &workers[w].token, &Value::object::<&str>([]))?,
        )?;
        let v: Value = fetched.parse()?;
        if v.get("noWork") == Some(&Value::Bool(true)) {
            idle.insert(w);
            workers[w].next_at = now + POLL_MILLIS;
            if idle.len() == workers.len() {
                break Outcome::NonConvergent;
            }
        } else {
            let view: MicrotaskView = fetched.parse()?;
            steps += 1;
            idle.clear();
            let skip = model.skip_p > 0.0 && rng.gen_bool(model.skip_p);
            let think = rng.gen_range(model.latency_ms.min..=model.latency_ms.max);
            workers[w].next_at = now + think.max(1);
            workers[w].held = Some(Held { view, skip });
        }
    };
    Ok((outcome, project_id, steps, rejected, now))
}

/// Counts recomputed from the service's log plus what the API reports.
fn build_report(
    scenario: &Scenario,
    seed: u64,
    wire: &Transport,
    service: &Service,
    driven: Driven,
    log_path: Option<&Path>,
) -> Result<(SimReport, ProjectId, Option<String>), SimError> {
    let (outcome, project_id, steps, rejected, now) = driven;
    let metrics: MetricsReport = expect_ok("metrics", wire.get(&format!("/metrics/{project_id}"), CLIENT_TOKEN)?)?.parse()?;
    let status: StatusReport =
        expect_ok("status", wire.get(&format!("/projects/{project_id}/status"), CLIENT_TOKEN)?)?.parse()?;
    let bundle = match outcome {
        Outcome::Completed => {
            Some(expect_ok("bundle", wire.get(&format!("/projects/{project_id}/bundle"), CLIENT_TOKEN)?)?.body)
        }
        _ => None,
    };
    let bundle_hash = match &bundle {
        Some(text) => Some(microcrowd_core::bundle::Bundle::load(text)?.manifest.content_hash),
        None => None,
    };

    let mut counts_by_kind: BTreeMap<MicrotaskKind, u64> = MicrotaskKind::ALL.iter().map(|k| (*k, 0)).collect();
    let (mut conflicts_opened, mut conflicts_resolved) = (0, 0);
    service.with_engine(|engine| {
        for event in engine.log().events() {
            match &event.body {
                EventBody::MicrotaskQueued { microtask } if microtask.project_id == project_id => {
                    *counts_by_kind.entry(microtask.kind()).or_insert(0) += 1;
                }
                EventBody::ConflictOpened { .. } => conflicts_opened += 1,
                EventBody::ConflictResolved { .. } => conflicts_resolved += 1,
                _ => {}
            }
        }
    });
    if outcome == Outcome::Completed && status.state != microcrowd_core::model::ProjectState::Complete {
        return Err(SimError::Protocol("submit reported completion but the project is not complete".into()));
    }

    let report = SimReport {
        outcome,
        scenario: scenario.name.clone(),
        seed,
        total_microtasks: counts_by_kind.values().sum(),
        debug_tasks: counts_by_kind[&MicrotaskKind::DebugFailure],
        counts_by_kind,
        conflicts_opened,
        conflicts_resolved,
        wall_steps: steps,
        virtual_millis: now,
        functions: status.functions.len() as u64,
        tests_written: metrics.tests_written,
        rejected_submissions: rejected,
        metrics_from_service: metrics,
        event_log_path: log_path.map(|p| p.display().to_string()),
        bundle_hash,
        stuck: status.stuck,
        flagged: status.flagged,
    };
    Ok((report, project_id, bundle))
}
