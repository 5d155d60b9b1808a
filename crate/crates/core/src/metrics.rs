//! Project measurements, computed purely from the event log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::event::{Event, EventBody, SubmissionOutcome};
use crate::ids::{BehaviorId, FunctionId, MicrotaskId, ProjectId, TestId, WorkerId};
use crate::model::{MicrotaskKind, Timestamp};

pub const ONBOARDING_DEFINITION: &str =
    "proxy: seconds from a worker's first assignment in the project to its first completed submission";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    pub project_id: ProjectId,
    pub microtasks_completed: u64,
    /// Lower-middle median of assignment-to-completion time, whole seconds.
    pub completion_seconds_median: u64,
    /// Completed microtasks per kind.
    pub counts_by_kind: BTreeMap<MicrotaskKind, u64>,
    pub behaviors_identified: u64,
    pub behaviors_tested: u64,
    /// Behaviors that passed at least one suite run.
    pub behaviors_passing: u64,
    pub functions_implemented: u64,
    pub tests_written: u64,
    pub conflicts_opened: u64,
    pub conflicts_resolved: u64,
    pub onboarding_seconds: BTreeMap<WorkerId, u64>,
    pub onboarding_definition: String,
}

/// Lower-middle element of the sorted values; 0 for none.
pub fn lower_median(values: &[u64]) -> u64 {
    if values.is_empty() {
        return 0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    sorted[(sorted.len() - 1) / 2]
}

#[derive(Default)]
struct Scan {
    function_project: BTreeMap<FunctionId, ProjectId>,
    microtask_project: BTreeMap<MicrotaskId, (ProjectId, MicrotaskKind)>,
    behavior_function: BTreeMap<BehaviorId, FunctionId>,
    assigned_at: BTreeMap<MicrotaskId, Timestamp>,
    first_assignment: BTreeMap<WorkerId, Timestamp>,
    first_completion: BTreeMap<WorkerId, Timestamp>,
    durations: Vec<u64>,
    tested: BTreeSet<BehaviorId>,
    passed: BTreeSet<BehaviorId>,
    implemented: BTreeSet<FunctionId>,
    tests: BTreeSet<TestId>,
}

pub fn compute_metrics(project: ProjectId, events: &[Event]) -> MetricsReport {
    let mut scan = Scan::default();
    let mut report = MetricsReport {
        project_id: project,
        microtasks_completed: 0,
        completion_seconds_median: 0,
        counts_by_kind: MicrotaskKind::ALL.iter().map(|k| (*k, 0)).collect(),
        behaviors_identified: 0,
        behaviors_tested: 0,
        behaviors_passing: 0,
        functions_implemented: 0,
        tests_written: 0,
        conflicts_opened: 0,
        conflicts_resolved: 0,
        onboarding_seconds: BTreeMap::new(),
        onboarding_definition: ONBOARDING_DEFINITION.to_string(),
    };

    for event in events {
        let in_project_fn = |scan: &Scan, f: FunctionId| scan.function_project.get(&f) == Some(&project);
        match &event.body {
            EventBody::FunctionSpecAdded { function } => {
                scan.function_project.insert(function.id, function.project_id);
            }
            EventBody::MicrotaskQueued { microtask } => {
                scan.microtask_project.insert(microtask.id, (microtask.project_id, microtask.kind()));
            }
            EventBody::MicrotaskAssigned { microtask_id, worker_id, .. } => {
                if scan.microtask_project.get(microtask_id).map(|p| p.0) == Some(project) {
                    scan.assigned_at.insert(*microtask_id, event.timestamp);
                    scan.first_assignment.entry(*worker_id).or_insert(event.timestamp);
                }
            }
            EventBody::SubmissionApplied { microtask_id, worker_id, outcome, .. } => {
                let Some(&(p, kind)) = scan.microtask_project.get(microtask_id) else { continue };
                if p != project || *outcome != SubmissionOutcome::Completed {
                    continue;
                }
                report.microtasks_completed += 1;
                *report.counts_by_kind.entry(kind).or_default() += 1;
                if let Some(assigned) = scan.assigned_at.get(microtask_id) {
                    scan.durations.push(event.timestamp.saturating_sub(*assigned) / 1000);
                }
                scan.first_completion.entry(*worker_id).or_insert(event.timestamp);
            }
            EventBody::BehaviorAdded { behavior } => {
                scan.behavior_function.insert(behavior.id, behavior.function_id);
                if in_project_fn(&scan, behavior.function_id) {
                    report.behaviors_identified += 1;
                }
            }
            EventBody::TestStored { test } => {
                let function = scan.behavior_function.get(&test.behavior_id).copied();
                if function.is_some_and(|f| in_project_fn(&scan, f)) {
                    scan.tested.insert(test.behavior_id);
                    scan.tests.insert(test.id);
                }
            }
            EventBody::ImplementationStored { implementation } => {
                if in_project_fn(&scan, implementation.function_id) {
                    scan.implemented.insert(implementation.function_id);
                }
            }
            EventBody::SuiteRan { report: suite, .. } => {
                if in_project_fn(&scan, suite.function_id) {
                    for (behavior, passed) in suite.behavior_outcomes() {
                        if passed {
                            scan.passed.insert(behavior);
                        }
                    }
                }
            }
            EventBody::ConflictOpened { conflict } if in_project_fn(&scan, conflict.function_id) => {
                report.conflicts_opened += 1;
            }
            _ => {}
        }
    }

    // Resolutions carry only the conflict id; count those whose opening was in scope.
    let mut opened = BTreeSet::new();
    for event in events {
        match &event.body {
            EventBody::ConflictOpened { conflict } if scan.function_project.get(&conflict.function_id) == Some(&project) => {
                opened.insert(conflict.id);
            }
            EventBody::ConflictResolved { conflict_id, .. } if opened.contains(conflict_id) => {
                report.conflicts_resolved += 1;
            }
            _ => {}
        }
    }

    report.completion_seconds_median = lower_median(&scan.durations);
    report.behaviors_tested = scan.tested.len() as u64;
    report.behaviors_passing = scan.passed.len() as u64;
    report.functions_implemented = scan.implemented.len() as u64;
    report.tests_written = scan.tests.len() as u64;
    for (worker, completed) in &scan.first_completion {
        if let Some(first) = scan.first_assignment.get(worker) {
            report.onboarding_seconds.insert(*worker, completed.saturating_sub(*first) / 1000);
        }
    }
    report
}
