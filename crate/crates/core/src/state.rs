//! Project state and the fold that builds it from events.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, EventBody, SubmissionOutcome};
use crate::harness::ActiveAssertion;
use crate::ids::{BehaviorId, ConflictId, FunctionId, MicrotaskId, ProjectId, TestId, WorkerId};
use crate::model::{
    Behavior, BehaviorState, Conflict, ConflictState, FunctionSpec, FunctionState, Implementation, Microtask,
    MicrotaskKind, MicrotaskPayload, MicrotaskState, Project, ProjectState, TestArtifact, Worker,
};
use crate::submission::SubmissionBody;
use crate::transition::{ensure, TransitionError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FoldError {
    #[error("event seq {got} does not follow {last}")]
    SeqGap { last: u64, got: u64 },
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("unknown {0}")]
    Missing(String),
    #[error("{0} already exists")]
    Duplicate(String),
    #[error("inconsistent event: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueueEntry {
    pub microtask_id: MicrotaskId,
    pub function_id: FunctionId,
    pub kind: MicrotaskKind,
    pub enqueue_seq: u64,
}

impl QueueEntry {
    pub fn order_key(&self) -> (u8, u64) {
        (self.kind.priority_rank(), self.enqueue_seq)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct State {
    pub last_seq: u64,
    pub projects: BTreeMap<ProjectId, Project>,
    pub functions: BTreeMap<FunctionId, FunctionSpec>,
    pub behaviors: BTreeMap<BehaviorId, Behavior>,
    pub tests: BTreeMap<TestId, TestArtifact>,
    /// Current implementation per function; earlier versions live in the log.
    pub implementations: BTreeMap<FunctionId, Implementation>,
    pub microtasks: BTreeMap<MicrotaskId, Microtask>,
    pub workers: BTreeMap<WorkerId, Worker>,
    pub conflicts: BTreeMap<ConflictId, Conflict>,
    pub queue: BTreeMap<MicrotaskId, QueueEntry>,
    pub next_enqueue_seq: u64,
    /// Non-terminal microtasks per function.
    pub open_microtasks: BTreeMap<FunctionId, BTreeSet<MicrotaskId>>,
}

fn next_key<K: Copy, V>(map: &BTreeMap<K, V>, raw: impl Fn(K) -> u64) -> u64 {
    map.keys().next_back().map(|k| raw(*k) + 1).unwrap_or(1)
}

impl State {
    pub fn new() -> Self {
        State::default()
    }

    pub fn next_project_id(&self) -> ProjectId {
        ProjectId(next_key(&self.projects, |k| k.0))
    }
    pub fn next_function_id(&self) -> FunctionId {
        FunctionId(next_key(&self.functions, |k| k.0))
    }
    pub fn next_behavior_id(&self) -> BehaviorId {
        BehaviorId(next_key(&self.behaviors, |k| k.0))
    }
    pub fn next_test_id(&self) -> TestId {
        TestId(next_key(&self.tests, |k| k.0))
    }
    pub fn next_microtask_id(&self) -> MicrotaskId {
        MicrotaskId(next_key(&self.microtasks, |k| k.0))
    }
    pub fn next_worker_id(&self) -> WorkerId {
        WorkerId(next_key(&self.workers, |k| k.0))
    }
    pub fn next_conflict_id(&self) -> ConflictId {
        ConflictId(next_key(&self.conflicts, |k| k.0))
    }

    pub fn canonical(&self) -> String {
        crate::value::to_canonical(self)
    }

    pub fn function_by_name(&self, project: ProjectId, name: &str) -> Option<&FunctionSpec> {
        self.functions.values().find(|f| f.project_id == project && f.name == name)
    }

    pub fn behaviors_of(&self, function: FunctionId) -> impl Iterator<Item = &Behavior> {
        self.functions
            .get(&function)
            .into_iter()
            .flat_map(|f| f.behavior_ids.iter())
            .filter_map(|id| self.behaviors.get(id))
    }

    pub fn test_of(&self, behavior: &Behavior) -> Option<&TestArtifact> {
        behavior.test_id.and_then(|t| self.tests.get(&t))
    }

    fn assertions_where(&self, function: FunctionId, keep: impl Fn(&Behavior) -> bool) -> Vec<ActiveAssertion> {
        let mut out = Vec::new();
        for behavior in self.behaviors_of(function).filter(|b| !b.revision_pending && keep(b)) {
            if let Some(test) = self.test_of(behavior) {
                for (index, a) in test.assertions.iter().enumerate() {
                    out.push(ActiveAssertion {
                        behavior_id: behavior.id,
                        assertion_index: index,
                        args: a.args.clone(),
                        expected: a.expected.clone(),
                    });
                }
            }
        }
        out.sort_by_key(|a| (a.behavior_id, a.assertion_index));
        out
    }

    /// Assertions an implementation is run against: tested behaviors that
    /// are neither conflicted, retired nor awaiting a test rewrite.
    pub fn suite_assertions(&self, function: FunctionId) -> Vec<ActiveAssertion> {
        self.assertions_where(function, |b| matches!(b.state, BehaviorState::Tested | BehaviorState::Passing))
    }

    /// Assertions checked for contradictions (suite plus conflicted behaviors).
    pub fn conflict_scope_assertions(&self, function: FunctionId) -> Vec<ActiveAssertion> {
        self.assertions_where(function, |b| {
            matches!(b.state, BehaviorState::Tested | BehaviorState::Passing | BehaviorState::Conflicted)
        })
    }

    pub fn open_conflicts_of(&self, function: FunctionId) -> impl Iterator<Item = &Conflict> {
        self.conflicts.values().filter(move |c| c.function_id == function && c.state == ConflictState::Open)
    }

    pub fn open_microtasks_of(&self, function: FunctionId) -> impl Iterator<Item = &Microtask> {
        self.open_microtasks
            .get(&function)
            .into_iter()
            .flatten()
            .filter_map(|id| self.microtasks.get(id))
    }

    /// Queue entries in service order: priority class, then FIFO.
    pub fn ordered_queue(&self) -> Vec<QueueEntry> {
        let mut entries: Vec<QueueEntry> = self.queue.values().copied().collect();
        entries.sort_by_key(QueueEntry::order_key);
        entries
    }

    /// Applies one event. On error the state may be partially modified;
    /// callers fold into a scratch copy.
    pub fn apply(&mut self, event: &Event) -> Result<(), FoldError> {
        if event.seq != self.last_seq + 1 {
            return Err(FoldError::SeqGap { last: self.last_seq, got: event.seq });
        }
        self.apply_body(&event.body, event.timestamp)?;
        self.last_seq = event.seq;
        Ok(())
    }

    fn apply_body(&mut self, body: &EventBody, ts: u64) -> Result<(), FoldError> {
        match body {
            EventBody::WorkerRegistered { worker } => {
                insert_new(&mut self.workers, worker.id, worker.clone(), "worker")?;
            }
            EventBody::ProjectCreated { project_id, spec } => {
                let project = Project {
                    id: *project_id,
                    spec: spec.clone(),
                    state: ProjectState::Active,
                    function_ids: Vec::new(),
                    created_at: ts,
                };
                insert_new(&mut self.projects, *project_id, project, "project")?;
            }
            EventBody::FunctionSpecAdded { function } => {
                let project = get_mut(&mut self.projects, function.project_id, "project")?;
                project.function_ids.push(function.id);
                insert_new(&mut self.functions, function.id, function.clone(), "function")?;
            }
            EventBody::MicrotaskQueued { microtask } => {
                if microtask.state != MicrotaskState::Queued {
                    return Err(FoldError::Inconsistent(format!("{} queued in state {:?}", microtask.id, microtask.state)));
                }
                match &microtask.payload {
                    MicrotaskPayload::ResolveConflict { conflict_id } => {
                        get_mut(&mut self.conflicts, *conflict_id, "conflict")?.ticket = Some(microtask.id);
                    }
                    MicrotaskPayload::WriteTest { behavior_id, revision: true } => {
                        get_mut(&mut self.behaviors, *behavior_id, "behavior")?.revision_pending = true;
                    }
                    _ => {}
                }
                insert_new(&mut self.microtasks, microtask.id, microtask.clone(), "microtask")?;
                self.open_microtasks.entry(microtask.function_id).or_default().insert(microtask.id);
                self.enqueue(microtask.id)?;
            }
            EventBody::MicrotaskAssigned { microtask_id, worker_id, lease_expiry } => {
                let worker = get_mut(&mut self.workers, *worker_id, "worker")?;
                if let Some(held) = worker.assigned_microtask_id {
                    return Err(FoldError::Inconsistent(format!("{worker_id} already holds {held}")));
                }
                worker.assigned_microtask_id = Some(*microtask_id);
                let mt = get_mut(&mut self.microtasks, *microtask_id, "microtask")?;
                transition_microtask(mt, MicrotaskState::Assigned)?;
                mt.assigned_worker_id = Some(*worker_id);
                mt.lease_expiry = Some(*lease_expiry);
                mt.assigned_at = Some(ts);
                self.queue.remove(microtask_id);
            }
            EventBody::MicrotaskSkipped { microtask_id, worker_id } => {
                self.release(*microtask_id, *worker_id, MicrotaskState::Skipped)?;
                get_mut(&mut self.microtasks, *microtask_id, "microtask")?.skip_count += 1;
                get_mut(&mut self.workers, *worker_id, "worker")?.skip_count += 1;
                self.enqueue(*microtask_id)?;
            }
            EventBody::MicrotaskTimedOut { microtask_id, worker_id } => {
                self.release(*microtask_id, *worker_id, MicrotaskState::TimedOut)?;
                get_mut(&mut self.microtasks, *microtask_id, "microtask")?.attempt += 1;
                self.enqueue(*microtask_id)?;
            }
            EventBody::SubmissionApplied { microtask_id, worker_id, body, outcome } => {
                self.apply_submission(*microtask_id, *worker_id, body, *outcome, ts)?;
            }
            EventBody::BehaviorAdded { behavior } => {
                let function = get_mut(&mut self.functions, behavior.function_id, "function")?;
                function.behavior_ids.push(behavior.id);
                if function.state == FunctionState::Specified {
                    ensure(function.state, FunctionState::InProgress)?;
                    function.state = FunctionState::InProgress;
                }
                insert_new(&mut self.behaviors, behavior.id, behavior.clone(), "behavior")?;
            }
            EventBody::BehaviorRevised { behavior_id, statement } => {
                get_mut(&mut self.behaviors, *behavior_id, "behavior")?.statement = statement.clone();
            }
            EventBody::TestStored { test } => {
                let previous = self.tests.get(&test.id).map(|t| t.version).unwrap_or(0);
                if test.version != previous + 1 {
                    return Err(FoldError::Inconsistent(format!("{} version {} after {previous}", test.id, test.version)));
                }
                let behavior = get_mut(&mut self.behaviors, test.behavior_id, "behavior")?;
                behavior.test_id = Some(test.id);
                behavior.revision_pending = false;
                if matches!(behavior.state, BehaviorState::Identified | BehaviorState::Passing) {
                    set_behavior_state(behavior, BehaviorState::Tested)?;
                }
                self.tests.insert(test.id, test.clone());
            }
            EventBody::ImplementationStored { implementation } => {
                let previous = self.implementations.get(&implementation.function_id).map(|i| i.version).unwrap_or(0);
                if implementation.version <= previous {
                    return Err(FoldError::Inconsistent(format!(
                        "implementation version {} after {previous}",
                        implementation.version
                    )));
                }
                self.implementations.insert(implementation.function_id, implementation.clone());
            }
            EventBody::SuiteRan { report, failure } => {
                for (behavior_id, passed) in report.behavior_outcomes() {
                    let behavior = get_mut(&mut self.behaviors, behavior_id, "behavior")?;
                    match (behavior.state, passed) {
                        (BehaviorState::Tested, true) => set_behavior_state(behavior, BehaviorState::Passing)?,
                        (BehaviorState::Passing, false) => set_behavior_state(behavior, BehaviorState::Tested)?,
                        _ => {}
                    }
                }
                let function_id = report.function_id;
                get_mut(&mut self.functions, function_id, "function")?.open_failure = failure.clone();
                if let Some(failure) = failure {
                    let open: Vec<MicrotaskId> = self.open_microtasks_of(function_id).map(|m| m.id).collect();
                    for id in open {
                        let mt = get_mut(&mut self.microtasks, id, "microtask")?;
                        if let MicrotaskPayload::DebugFailure { report } = &mut mt.payload {
                            *report = failure.clone();
                        }
                    }
                }
            }
            EventBody::ConflictOpened { conflict } => {
                for behavior_id in [conflict.first.behavior_id, conflict.second.behavior_id] {
                    let behavior = get_mut(&mut self.behaviors, behavior_id, "behavior")?;
                    if behavior.state != BehaviorState::Conflicted {
                        set_behavior_state(behavior, BehaviorState::Conflicted)?;
                    }
                }
                insert_new(&mut self.conflicts, conflict.id, conflict.clone(), "conflict")?;
            }
            EventBody::ConflictResolved { conflict_id, .. } => {
                let conflict = get_mut(&mut self.conflicts, *conflict_id, "conflict")?;
                if conflict.state != ConflictState::Open {
                    return Err(FoldError::Inconsistent(format!("{conflict_id} is not open")));
                }
                conflict.state = ConflictState::Resolved;
                let pair = [conflict.first.behavior_id, conflict.second.behavior_id];
                for behavior_id in pair {
                    let still_conflicted = self
                        .conflicts
                        .values()
                        .any(|c| c.state == ConflictState::Open && c.involves(behavior_id));
                    let behavior = get_mut(&mut self.behaviors, behavior_id, "behavior")?;
                    if !still_conflicted && behavior.state == BehaviorState::Conflicted {
                        set_behavior_state(behavior, BehaviorState::Tested)?;
                    }
                }
            }
            EventBody::BehaviorRetired { behavior_id, .. } => {
                let behavior = get_mut(&mut self.behaviors, *behavior_id, "behavior")?;
                set_behavior_state(behavior, BehaviorState::Retired)?;
            }
            EventBody::FunctionCompleted { function_id } => {
                let function = get_mut(&mut self.functions, *function_id, "function")?;
                ensure(function.state, FunctionState::Complete)?;
                function.state = FunctionState::Complete;
            }
            EventBody::ProjectCompleted { project_id } => {
                let project = get_mut(&mut self.projects, *project_id, "project")?;
                if project.state != ProjectState::Active {
                    return Err(FoldError::Inconsistent(format!("{project_id} completed twice")));
                }
                project.state = ProjectState::Complete;
            }
        }
        Ok(())
    }

    fn apply_submission(
        &mut self,
        microtask_id: MicrotaskId,
        worker_id: WorkerId,
        body: &SubmissionBody,
        outcome: SubmissionOutcome,
        ts: u64,
    ) -> Result<(), FoldError> {
        let worker = get_mut(&mut self.workers, worker_id, "worker")?;
        if worker.assigned_microtask_id != Some(microtask_id) {
            return Err(FoldError::Inconsistent(format!("{worker_id} does not hold {microtask_id}")));
        }
        worker.assigned_microtask_id = None;
        if outcome == SubmissionOutcome::Completed {
            worker.completed_count += 1;
        }

        let mt = get_mut(&mut self.microtasks, microtask_id, "microtask")?;
        transition_microtask(mt, MicrotaskState::Submitted)?;
        let function_id = mt.function_id;
        match outcome {
            SubmissionOutcome::Completed => {
                transition_microtask(mt, MicrotaskState::Completed)?;
                mt.completed_at = Some(ts);
                mt.lease_expiry = None;
                if let Some(open) = self.open_microtasks.get_mut(&function_id) {
                    open.remove(&microtask_id);
                    if open.is_empty() {
                        self.open_microtasks.remove(&function_id);
                    }
                }
                if let SubmissionBody::IdentifyBehavior { no_more_behaviors: true, .. } = body {
                    get_mut(&mut self.functions, function_id, "function")?.no_more_declarers.insert(worker_id);
                }
            }
            SubmissionOutcome::Requeued => {
                transition_microtask(mt, MicrotaskState::Queued)?;
                mt.attempt += 1;
                mt.assigned_worker_id = None;
                mt.lease_expiry = None;
                self.enqueue(microtask_id)?;
            }
        }
        Ok(())
    }

    /// Moves an assigned microtask through `via` back to Queued and frees
    /// the worker's slot. The caller re-enqueues.
    fn release(&mut self, microtask_id: MicrotaskId, worker_id: WorkerId, via: MicrotaskState) -> Result<(), FoldError> {
        let mt = get_mut(&mut self.microtasks, microtask_id, "microtask")?;
        if mt.assigned_worker_id != Some(worker_id) {
            return Err(FoldError::Inconsistent(format!("{microtask_id} is not assigned to {worker_id}")));
        }
        transition_microtask(mt, via)?;
        transition_microtask(mt, MicrotaskState::Queued)?;
        mt.assigned_worker_id = None;
        mt.lease_expiry = None;
        get_mut(&mut self.workers, worker_id, "worker")?.assigned_microtask_id = None;
        Ok(())
    }

    fn enqueue(&mut self, microtask_id: MicrotaskId) -> Result<(), FoldError> {
        let mt = self.microtasks.get(&microtask_id).ok_or_else(|| FoldError::Missing(microtask_id.to_string()))?;
        let entry = QueueEntry {
            microtask_id,
            function_id: mt.function_id,
            kind: mt.kind(),
            enqueue_seq: self.next_enqueue_seq + 1,
        };
        self.next_enqueue_seq += 1;
        if self.queue.insert(microtask_id, entry).is_some() {
            return Err(FoldError::Duplicate(format!("queue entry for {microtask_id}")));
        }
        Ok(())
    }
}

fn insert_new<K: Ord + Copy + std::fmt::Display, V>(
    map: &mut BTreeMap<K, V>,
    key: K,
    value: V,
    what: &str,
) -> Result<(), FoldError> {
    if map.contains_key(&key) {
        return Err(FoldError::Duplicate(format!("{what} {key}")));
    }
    map.insert(key, value);
    Ok(())
}

fn get_mut<'a, K: Ord + Copy + std::fmt::Display, V>(
    map: &'a mut BTreeMap<K, V>,
    key: K,
    what: &str,
) -> Result<&'a mut V, FoldError> {
    map.get_mut(&key).ok_or_else(|| FoldError::Missing(format!("{what} {key}")))
}

fn transition_microtask(mt: &mut Microtask, to: MicrotaskState) -> Result<(), FoldError> {
    ensure(mt.state, to)?;
    mt.state = to;
    Ok(())
}

fn set_behavior_state(behavior: &mut Behavior, to: BehaviorState) -> Result<(), FoldError> {
    ensure(behavior.state, to)?;
    behavior.state = to;
    Ok(())
}

/// Folds a sequence of events onto `state`.
pub fn fold<'a>(mut state: State, events: impl IntoIterator<Item = &'a Event>) -> Result<State, FoldError> {
    for event in events {
        state.apply(event)?;
    }
    Ok(state)
}
