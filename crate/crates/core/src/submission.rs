//! Worker submissions, one body shape per microtask kind.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{BehaviorId, MicrotaskId, WorkerId};
use crate::model::{Assertion, ImplementationDraft, MicrotaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Submission {
    pub microtask_id: MicrotaskId,
    pub worker_id: WorkerId,
    pub body: SubmissionBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all_fields = "camelCase")]
pub enum SubmissionBody {
    /// Exactly one of `new_statement` / `no_more_behaviors` must be set.
    IdentifyBehavior {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        new_statement: Option<String>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        no_more_behaviors: bool,
    },
    WriteTest {
        assertions: Vec<Assertion>,
    },
    ImplementBehavior {
        implementation: ImplementationDraft,
    },
    DebugFailure {
        outcome: DebugOutcome,
    },
    ResolveConflict {
        #[serde(default)]
        edited_statements: BTreeMap<BehaviorId, String>,
        #[serde(default)]
        edited_tests: BTreeMap<BehaviorId, Vec<Assertion>>,
    },
}

impl SubmissionBody {
    pub fn kind(&self) -> MicrotaskKind {
        match self {
            SubmissionBody::IdentifyBehavior { .. } => MicrotaskKind::IdentifyBehavior,
            SubmissionBody::WriteTest { .. } => MicrotaskKind::WriteTest,
            SubmissionBody::ImplementBehavior { .. } => MicrotaskKind::ImplementBehavior,
            SubmissionBody::DebugFailure { .. } => MicrotaskKind::DebugFailure,
            SubmissionBody::ResolveConflict { .. } => MicrotaskKind::ResolveConflict,
        }
    }

    pub fn new_statement(statement: impl Into<String>) -> Self {
        SubmissionBody::IdentifyBehavior { new_statement: Some(statement.into()), no_more_behaviors: false }
    }

    pub fn no_more_behaviors() -> Self {
        SubmissionBody::IdentifyBehavior { new_statement: None, no_more_behaviors: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum DebugOutcome {
    FixedImplementation(ImplementationDraft),
    DisputeTest { behavior_id: BehaviorId, reason: String },
    DisputeBehavior { behavior_id: BehaviorId, reason: String },
}
