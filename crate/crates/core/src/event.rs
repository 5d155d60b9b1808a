//! Append-only facts. Project state is a fold over these.

use serde::{Deserialize, Serialize};

use crate::harness::SuiteReport;
use crate::ids::{BehaviorId, ConflictId, FunctionId, MicrotaskId, ProjectId, WorkerId};
use crate::model::{
    Behavior, Conflict, FailureReport, FunctionSpec, Implementation, Microtask, ProjectSpec, TestArtifact, Timestamp,
    Worker,
};
use crate::submission::SubmissionBody;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Event {
    pub seq: u64,
    pub timestamp: Timestamp,
    /// Seq of the first event of the commit this event belongs to.
    pub tx: u64,
    /// True on the last event of its commit.
    pub tx_end: bool,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SubmissionOutcome {
    Completed,
    /// The work is not finished; the same microtask goes back to the queue.
    Requeued,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all_fields = "camelCase")]
pub enum EventBody {
    WorkerRegistered { worker: Worker },
    ProjectCreated { project_id: ProjectId, spec: ProjectSpec },
    FunctionSpecAdded { function: FunctionSpec },
    MicrotaskQueued { microtask: Microtask },
    MicrotaskAssigned { microtask_id: MicrotaskId, worker_id: WorkerId, lease_expiry: Timestamp },
    MicrotaskSkipped { microtask_id: MicrotaskId, worker_id: WorkerId },
    MicrotaskTimedOut { microtask_id: MicrotaskId, worker_id: WorkerId },
    SubmissionApplied { microtask_id: MicrotaskId, worker_id: WorkerId, body: SubmissionBody, outcome: SubmissionOutcome },
    BehaviorAdded { behavior: Behavior },
    BehaviorRevised { behavior_id: BehaviorId, statement: String },
    TestStored { test: TestArtifact },
    ImplementationStored { implementation: Implementation },
    SuiteRan { report: SuiteReport, failure: Option<FailureReport> },
    ConflictOpened { conflict: Conflict },
    ConflictResolved { conflict_id: ConflictId, superseded: bool },
    BehaviorRetired { behavior_id: BehaviorId, reason: String },
    FunctionCompleted { function_id: FunctionId },
    ProjectCompleted { project_id: ProjectId },
}

impl EventBody {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EventBody::WorkerRegistered { .. } => "WorkerRegistered",
            EventBody::ProjectCreated { .. } => "ProjectCreated",
            EventBody::FunctionSpecAdded { .. } => "FunctionSpecAdded",
            EventBody::MicrotaskQueued { .. } => "MicrotaskQueued",
            EventBody::MicrotaskAssigned { .. } => "MicrotaskAssigned",
            EventBody::MicrotaskSkipped { .. } => "MicrotaskSkipped",
            EventBody::MicrotaskTimedOut { .. } => "MicrotaskTimedOut",
            EventBody::SubmissionApplied { .. } => "SubmissionApplied",
            EventBody::BehaviorAdded { .. } => "BehaviorAdded",
            EventBody::BehaviorRevised { .. } => "BehaviorRevised",
            EventBody::TestStored { .. } => "TestStored",
            EventBody::ImplementationStored { .. } => "ImplementationStored",
            EventBody::SuiteRan { .. } => "SuiteRan",
            EventBody::ConflictOpened { .. } => "ConflictOpened",
            EventBody::ConflictResolved { .. } => "ConflictResolved",
            EventBody::BehaviorRetired { .. } => "BehaviorRetired",
            EventBody::FunctionCompleted { .. } => "FunctionCompleted",
            EventBody::ProjectCompleted { .. } => "ProjectCompleted",
        }
    }
}
