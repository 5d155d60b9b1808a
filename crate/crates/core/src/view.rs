//! The self-contained picture of a microtask handed to its worker.

use serde::{Deserialize, Serialize};

use crate::ids::{BehaviorId, FunctionId, MicrotaskId, ProjectId};
use crate::model::{
    BehaviorState, Conflict, FailureReport, Field, FunctionSpec, Implementation, MicrotaskKind, MicrotaskPayload,
    ScalarType, TestArtifact, Timestamp,
};
use crate::state::State;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FunctionView {
    pub id: FunctionId,
    pub name: String,
    pub params: Vec<Field>,
    pub return_type: ScalarType,
    pub description: String,
}

impl From<&FunctionSpec> for FunctionView {
    fn from(f: &FunctionSpec) -> Self {
        FunctionView {
            id: f.id,
            name: f.name.clone(),
            params: f.params.clone(),
            return_type: f.return_type.clone(),
            description: f.description.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BehaviorView {
    pub id: BehaviorId,
    pub statement: String,
    pub state: BehaviorState,
    pub revision_pending: bool,
    pub test: Option<TestArtifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MicrotaskView {
    pub microtask_id: MicrotaskId,
    pub kind: MicrotaskKind,
    pub attempt: u32,
    pub lease_expiry: Option<Timestamp>,
    pub project_id: ProjectId,
    pub function: FunctionView,
    /// Live (non-retired) behaviors of the function with their tests.
    pub behaviors: Vec<BehaviorView>,
    pub focus_behavior_id: Option<BehaviorId>,
    pub revision: bool,
    pub implementation: Option<Implementation>,
    pub failure_report: Option<FailureReport>,
    pub conflict: Option<Conflict>,
    /// Other functions of the project, for reuse as pseudo-calls.
    pub other_functions: Vec<FunctionView>,
}

pub fn microtask_view(state: &State, id: MicrotaskId) -> Option<MicrotaskView> {
    let mt = state.microtasks.get(&id)?;
    let function = state.functions.get(&mt.function_id)?;
    let behaviors = state
        .behaviors_of(function.id)
        .filter(|b| b.state != BehaviorState::Retired)
        .map(|b| BehaviorView {
            id: b.id,
            statement: b.statement.clone(),
            state: b.state,
            revision_pending: b.revision_pending,
            test: state.test_of(b).cloned(),
        })
        .collect();
    let (focus, revision, failure, conflict) = match &mt.payload {
        MicrotaskPayload::IdentifyBehavior => (None, false, None, None),
        MicrotaskPayload::WriteTest { behavior_id, revision } => (Some(*behavior_id), *revision, None, None),
        MicrotaskPayload::ImplementBehavior { behavior_id } => (Some(*behavior_id), false, None, None),
        MicrotaskPayload::DebugFailure { report } => (None, false, Some(report.clone()), None),
        MicrotaskPayload::ResolveConflict { conflict_id } => (None, false, None, state.conflicts.get(conflict_id).cloned()),
    };
    let other_functions = state
        .projects
        .get(&mt.project_id)
        .into_iter()
        .flat_map(|p| p.function_ids.iter())
        .filter(|f| **f != function.id)
        .filter_map(|f| state.functions.get(f))
        .map(FunctionView::from)
        .collect();
    Some(MicrotaskView {
        microtask_id: id,
        kind: mt.kind(),
        attempt: mt.attempt,
        lease_expiry: mt.lease_expiry,
        project_id: mt.project_id,
        function: FunctionView::from(function),
        behaviors,
        focus_behavior_id: focus,
        revision,
        implementation: state.implementations.get(&function.id).cloned(),
        failure_report: failure,
        conflict,
        other_functions,
    })
}
