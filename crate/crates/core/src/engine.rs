//! The orchestration engine: every operation is one atomic commit of events.

use serde::{Deserialize, Serialize};

use crate::bundle::{build_bundle, Bundle};
use crate::conflict::{detect_contradictions, Contradiction};
use crate::error::EngineError;
use crate::event::{Event, EventBody};
use crate::harness::{Harness, HarnessConfig};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::ids::{ConflictId, FunctionId, MicrotaskId, ProjectId, WorkerId};
use crate::model::{Microtask, MicrotaskPayload, MicrotaskState, ProjectSpec, Timestamp, Worker};
use crate::scheduler::{Assignment, SchedulerConfig, SkipResult};
use crate::state::State;
use crate::status::{status_report, StatusReport};
use crate::view::{microtask_view, MicrotaskView};
use crate::store::{EventLog, Snapshot};
use crate::submission::Submission;
use crate::workflow::SubmitResult;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct EngineConfig {
    pub scheduler: SchedulerConfig,
    pub harness: HarnessConfig,
}

/// Scratch space for one commit. Events are applied to a private copy of
/// the state as they are emitted, so later steps see earlier effects.
pub(crate) struct Txn<'a> {
    pub state: State,
    pub now: Timestamp,
    pub config: &'a EngineConfig,
    pub harness: &'a Harness,
    pub spawned: Vec<MicrotaskId>,
    events: Vec<Event>,
}

impl<'a> Txn<'a> {
    pub fn emit(&mut self, body: EventBody) -> Result<(), EngineError> {
        let event = Event { seq: self.state.last_seq + 1, timestamp: self.now, tx: 0, tx_end: false, body };
        self.state.apply(&event)?;
        self.events.push(event);
        Ok(())
    }

    pub fn queue(&mut self, function: FunctionId, payload: MicrotaskPayload) -> Result<MicrotaskId, EngineError> {
        let project_id = self
            .state
            .functions
            .get(&function)
            .ok_or_else(|| EngineError::UnknownFunction(function.to_string()))?
            .project_id;
        let id = self.state.next_microtask_id();
        let microtask = Microtask {
            id,
            project_id,
            function_id: function,
            payload,
            state: MicrotaskState::Queued,
            assigned_worker_id: None,
            lease_expiry: None,
            attempt: 1,
            skip_count: 0,
            created_at: self.now,
            assigned_at: None,
            completed_at: None,
        };
        self.emit(EventBody::MicrotaskQueued { microtask })?;
        self.spawned.push(id);
        Ok(id)
    }

    fn into_commit(self) -> (State, Vec<Event>) {
        let mut events = self.events;
        if let Some(first) = events.first().map(|e| e.seq) {
            let last = events.len() - 1;
            for (i, e) in events.iter_mut().enumerate() {
                e.tx = first;
                e.tx_end = i == last;
            }
        }
        (self.state, events)
    }
}

pub struct Engine {
    state: State,
    log: EventLog,
    config: EngineConfig,
    harness: Harness,
    lazy_reclaim: bool,
}

impl Engine {
    /// An engine over a fresh in-memory log.
    pub fn new(config: EngineConfig) -> Self {
        let harness = Harness::new(config.harness.clone());
        Engine { state: State::new(), log: EventLog::in_memory(), config, harness, lazy_reclaim: false }
    }

    /// An engine over an existing log, with state rebuilt by replay.
    pub fn open(log: EventLog, config: EngineConfig) -> Result<Self, EngineError> {
        let state = log.replay(None)?;
        let harness = Harness::new(config.harness.clone());
        Ok(Engine { state, log, config, harness, lazy_reclaim: false })
    }

    /// Like [`Engine::open`], folding only the log tail onto `snapshot`.
    /// A snapshot ahead of the log is ignored.
    pub fn open_with_snapshot(log: EventLog, snapshot: &Snapshot, config: EngineConfig) -> Result<Self, EngineError> {
        if snapshot.as_of_seq > log.last_seq() {
            return Engine::open(log, config);
        }
        let state = snapshot.fold_tail(log.events())?;
        let harness = Harness::new(config.harness.clone());
        Ok(Engine { state, log, config, harness, lazy_reclaim: false })
    }

    /// When on, fetch, skip and submit first time out expired leases inside
    /// their own commit, so a rejected request still changes nothing.
    pub fn set_lazy_reclaim(&mut self, on: bool) {
        self.lazy_reclaim = on;
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut EventLog {
        &mut self.log
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Runs `op` against a scratch state; its events become durable and
    /// visible together, or not at all.
    fn commit<R>(
        &mut self,
        now: Timestamp,
        op: impl FnOnce(&mut Txn<'_>) -> Result<R, EngineError>,
    ) -> Result<R, EngineError> {
        let mut txn = Txn {
            state: self.state.clone(),
            now,
            config: &self.config,
            harness: &self.harness,
            spawned: Vec::new(),
            events: Vec::new(),
        };
        let result = op(&mut txn)?;
        let (state, events) = txn.into_commit();
        if !events.is_empty() {
            self.log.append(&events)?;
            self.state = state;
        }
        Ok(result)
    }

    pub fn register_worker(&mut self, handle: &str, now: Timestamp) -> Result<WorkerId, EngineError> {
        self.commit(now, |tx| {
            let id = tx.state.next_worker_id();
            let worker =
                Worker { id, handle: handle.to_string(), assigned_microtask_id: None, completed_count: 0, skip_count: 0 };
            tx.emit(EventBody::WorkerRegistered { worker })?;
            Ok(id)
        })
    }

    pub fn create_project(&mut self, spec: ProjectSpec, now: Timestamp) -> Result<ProjectId, EngineError> {
        self.commit(now, |tx| tx.create_project(spec))
    }

    pub fn fetch_next(&mut self, worker: WorkerId, now: Timestamp) -> Result<Option<Assignment>, EngineError> {
        let lazy = self.lazy_reclaim;
        self.commit(now, |tx| {
            if lazy {
                tx.reclaim_expired()?;
            }
            tx.fetch_next(worker)
        })
    }

    pub fn skip(&mut self, worker: WorkerId, microtask: MicrotaskId, now: Timestamp) -> Result<SkipResult, EngineError> {
        let lazy = self.lazy_reclaim;
        self.commit(now, |tx| {
            if lazy {
                tx.reclaim_expired()?;
            }
            tx.skip(worker, microtask)
        })
    }

    pub fn reclaim_expired(&mut self, now: Timestamp) -> Result<Vec<MicrotaskId>, EngineError> {
        self.commit(now, |tx| tx.reclaim_expired())
    }

    pub fn apply_submission(&mut self, submission: Submission, now: Timestamp) -> Result<SubmitResult, EngineError> {
        let lazy = self.lazy_reclaim;
        self.commit(now, |tx| {
            if lazy {
                tx.reclaim_expired()?;
            }
            tx.submit(submission)
        })
    }

    /// Completes the function (and possibly its project) if every
    /// completion condition holds.
    pub fn check_function_completion(&mut self, function: FunctionId, now: Timestamp) -> Result<bool, EngineError> {
        self.commit(now, |tx| tx.check_completion(function))
    }

    /// Queues a resolution microtask for an open, unticketed conflict.
    pub fn open_resolution(&mut self, conflict: ConflictId, now: Timestamp) -> Result<MicrotaskId, EngineError> {
        self.commit(now, |tx| tx.open_resolution(conflict))
    }

    pub fn build_bundle(&self, project: ProjectId) -> Result<Bundle, EngineError> {
        build_bundle(&self.state, self.log.events(), project)
    }

    pub fn status(&self, project: ProjectId) -> Option<StatusReport> {
        status_report(&self.state, self.log.events(), &self.config.scheduler, project)
    }

    pub fn metrics(&self, project: ProjectId) -> MetricsReport {
        compute_metrics(project, self.log.events())
    }

    pub fn microtask_view(&self, microtask: MicrotaskId) -> Option<MicrotaskView> {
        microtask_view(&self.state, microtask)
    }

    /// Contradictions currently present among the function's tests.
    pub fn detect_conflicts(&self, function: FunctionId) -> Result<Vec<Contradiction>, EngineError> {
        if !self.state.functions.contains_key(&function) {
            return Err(EngineError::UnknownFunction(function.to_string()));
        }
        Ok(detect_contradictions(&self.state.conflict_scope_assertions(function)))
    }
}
