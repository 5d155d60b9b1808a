//! Queue service: who may take which microtask, leases, skips and timeouts.

use serde::{Deserialize, Serialize};

use crate::engine::Txn;
use crate::error::EngineError;
use crate::event::EventBody;
use crate::ids::{MicrotaskId, WorkerId};
use crate::model::{MicrotaskKind, MicrotaskPayload, MicrotaskState, Timestamp};
use crate::state::State;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SchedulerConfig {
    pub lease_seconds: u64,
    /// Skip count at which a microtask is reported as flagged.
    pub max_skips_before_flag: u32,
    /// Attempt count above which a microtask is reported as stuck.
    pub max_attempts: u32,
    /// Keep authors away from reviewing or repairing their own work.
    pub self_exclusion: bool,
    /// Distinct workers that must declare a behavior set complete.
    pub identify_quorum: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            lease_seconds: 600,
            max_skips_before_flag: 3,
            max_attempts: 10,
            self_exclusion: false,
            identify_quorum: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Assignment {
    pub microtask_id: MicrotaskId,
    pub kind: MicrotaskKind,
    pub lease_expiry: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SkipResult {
    pub flagged: bool,
}

/// Whether `worker` may be handed microtask `id` right now.
pub fn is_eligible(state: &State, config: &SchedulerConfig, worker: WorkerId, id: MicrotaskId) -> bool {
    let Some(mt) = state.microtasks.get(&id) else { return false };
    if mt.state != MicrotaskState::Queued {
        return false;
    }
    let Some(function) = state.functions.get(&mt.function_id) else { return false };
    let kind = mt.kind();

    if kind.is_writer()
        && state.open_microtasks_of(mt.function_id).any(|o| o.id != id && o.in_flight() && o.kind().is_writer())
    {
        return false;
    }
    match &mt.payload {
        MicrotaskPayload::IdentifyBehavior => {
            if function.no_more_declarers.contains(&worker) {
                return false;
            }
        }
        MicrotaskPayload::ImplementBehavior { .. } => {
            let blocked = state.open_conflicts_of(mt.function_id).next().is_some()
                || state
                    .open_microtasks_of(mt.function_id)
                    .any(|o| o.id != id && o.kind() == MicrotaskKind::DebugFailure);
            if blocked {
                return false;
            }
        }
        _ => {}
    }
    !(config.self_exclusion && authored_by(state, &mt.payload, mt.function_id, worker))
}

fn test_author(state: &State, behavior: crate::ids::BehaviorId) -> Option<WorkerId> {
    let b = state.behaviors.get(&behavior)?;
    state.test_of(b).map(|t| t.author_worker_id)
}

fn authored_by(state: &State, payload: &MicrotaskPayload, function: crate::ids::FunctionId, worker: WorkerId) -> bool {
    match payload {
        MicrotaskPayload::IdentifyBehavior => false,
        MicrotaskPayload::WriteTest { behavior_id, revision } => {
            *revision && test_author(state, *behavior_id) == Some(worker)
        }
        MicrotaskPayload::ImplementBehavior { behavior_id } => test_author(state, *behavior_id) == Some(worker),
        MicrotaskPayload::DebugFailure { .. } => {
            state.implementations.get(&function).map(|i| i.author_worker_id) == Some(worker)
        }
        MicrotaskPayload::ResolveConflict { conflict_id } => state.conflicts.get(conflict_id).is_some_and(|c| {
            test_author(state, c.first.behavior_id) == Some(worker)
                || test_author(state, c.second.behavior_id) == Some(worker)
        }),
    }
}

impl Txn<'_> {
    pub(crate) fn fetch_next(&mut self, worker: WorkerId) -> Result<Option<Assignment>, EngineError> {
        let w = self.state.workers.get(&worker).ok_or_else(|| EngineError::UnknownWorker(worker.to_string()))?;
        if let Some(held) = w.assigned_microtask_id {
            return Err(EngineError::AlreadyAssigned(held.to_string()));
        }
        let config = &self.config.scheduler;
        let chosen = self
            .state
            .ordered_queue()
            .into_iter()
            .find(|e| is_eligible(&self.state, config, worker, e.microtask_id));
        let Some(entry) = chosen else { return Ok(None) };
        let lease_expiry = self.now + config.lease_seconds * 1000;
        self.emit(EventBody::MicrotaskAssigned { microtask_id: entry.microtask_id, worker_id: worker, lease_expiry })?;
        Ok(Some(Assignment { microtask_id: entry.microtask_id, kind: entry.kind, lease_expiry }))
    }

    pub(crate) fn skip(&mut self, worker: WorkerId, id: MicrotaskId) -> Result<SkipResult, EngineError> {
        if !self.state.workers.contains_key(&worker) {
            return Err(EngineError::UnknownWorker(worker.to_string()));
        }
        self.check_assignee(worker, id)?;
        self.emit(EventBody::MicrotaskSkipped { microtask_id: id, worker_id: worker })?;
        let skips = self.state.microtasks[&id].skip_count;
        Ok(SkipResult { flagged: skips >= self.config.scheduler.max_skips_before_flag })
    }

    /// Returns every assigned microtask whose lease ran out to the queue.
    pub(crate) fn reclaim_expired(&mut self) -> Result<Vec<MicrotaskId>, EngineError> {
        let now = self.now;
        let expired: Vec<(MicrotaskId, WorkerId)> = self
            .state
            .microtasks
            .values()
            .filter(|m| m.state == MicrotaskState::Assigned && m.lease_expiry.is_some_and(|t| t < now))
            .filter_map(|m| m.assigned_worker_id.map(|w| (m.id, w)))
            .collect();
        for (microtask_id, worker_id) in &expired {
            self.emit(EventBody::MicrotaskTimedOut { microtask_id: *microtask_id, worker_id: *worker_id })?;
        }
        Ok(expired.into_iter().map(|(m, _)| m).collect())
    }

    pub(crate) fn check_assignee(&self, worker: WorkerId, id: MicrotaskId) -> Result<(), EngineError> {
        let mt = self.state.microtasks.get(&id).ok_or_else(|| EngineError::UnknownMicrotask(id.to_string()))?;
        if mt.state == MicrotaskState::Completed {
            return Err(EngineError::StaleMicrotask);
        }
        if mt.state != MicrotaskState::Assigned || mt.assigned_worker_id != Some(worker) {
            return Err(EngineError::NotAssignee);
        }
        Ok(())
    }
}
