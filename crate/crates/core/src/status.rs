//! Project status document served to clients and dashboards.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::event::Event;
use crate::ids::{BehaviorId, FunctionId, MicrotaskId, ProjectId};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{BehaviorState, Conflict, FunctionState, MicrotaskKind, ProjectState};
use crate::scheduler::SchedulerConfig;
use crate::state::State;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BehaviorStatus {
    pub id: BehaviorId,
    pub statement: String,
    pub state: BehaviorState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FunctionStatus {
    pub id: FunctionId,
    pub name: String,
    pub state: FunctionState,
    pub behaviors: Vec<BehaviorStatus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AttentionEntry {
    pub microtask_id: MicrotaskId,
    pub kind: MicrotaskKind,
    pub function_id: FunctionId,
    pub attempt: u32,
    pub skip_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatusReport {
    pub project_id: ProjectId,
    pub state: ProjectState,
    pub functions: Vec<FunctionStatus>,
    /// Queued (unassigned) microtasks per kind; kinds with none are omitted.
    pub queue_depths: BTreeMap<MicrotaskKind, u64>,
    pub open_conflicts: Vec<Conflict>,
    /// Skipped at least the configured number of times.
    pub flagged: Vec<AttentionEntry>,
    /// Attempted more often than the configured cap.
    pub stuck: Vec<AttentionEntry>,
    pub metrics: MetricsReport,
}

pub fn status_report(
    state: &State,
    events: &[Event],
    config: &SchedulerConfig,
    project_id: ProjectId,
) -> Option<StatusReport> {
    let project = state.projects.get(&project_id)?;
    let functions = project
        .function_ids
        .iter()
        .filter_map(|id| state.functions.get(id))
        .map(|f| FunctionStatus {
            id: f.id,
            name: f.name.clone(),
            state: f.state,
            behaviors: state
                .behaviors_of(f.id)
                .map(|b| BehaviorStatus { id: b.id, statement: b.statement.clone(), state: b.state })
                .collect(),
        })
        .collect();

    let mut queue_depths = BTreeMap::new();
    for entry in state.queue.values() {
        if state.microtasks.get(&entry.microtask_id).is_some_and(|m| m.project_id == project_id) {
            *queue_depths.entry(entry.kind).or_insert(0) += 1;
        }
    }

    let open_conflicts = project
        .function_ids
        .iter()
        .flat_map(|f| state.open_conflicts_of(*f))
        .cloned()
        .collect();

    let mut flagged = Vec::new();
    let mut stuck = Vec::new();
    for mt in state.microtasks.values().filter(|m| m.project_id == project_id && !m.is_terminal()) {
        let entry = AttentionEntry {
            microtask_id: mt.id,
            kind: mt.kind(),
            function_id: mt.function_id,
            attempt: mt.attempt,
            skip_count: mt.skip_count,
        };
        if mt.skip_count >= config.max_skips_before_flag {
            flagged.push(entry.clone());
        }
        if mt.attempt > config.max_attempts {
            stuck.push(entry);
        }
    }

    Some(StatusReport {
        project_id,
        state: project.state,
        functions,
        queue_depths,
        open_conflicts,
        flagged,
        stuck,
        metrics: compute_metrics(project_id, events),
    })
}
