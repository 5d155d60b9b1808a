//! Project creation, submission handling and the rules that decide what
//! work follows from each submission.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::conflict::detect_contradictions;
use crate::engine::Txn;
use crate::error::EngineError;
use crate::event::{EventBody, SubmissionOutcome};
use crate::harness::build_failure_report;
use crate::ids::{BehaviorId, ConflictId, FunctionId, MicrotaskId, ProjectId, WorkerId};
use crate::model::{
    Assertion, Behavior, BehaviorState, Conflict, ConflictState, Field, FailureReport, FunctionOrigin, FunctionSpec,
    FunctionState, Implementation, ImplementationBody, ImplementationDraft, MicrotaskKind, MicrotaskPayload,
    ProjectSpec, ProjectState, ScalarType, TestArtifact,
};
use crate::submission::{DebugOutcome, Submission, SubmissionBody};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubmitResult {
    pub outcome: SubmissionOutcome,
    /// Microtasks queued by this submission, in creation order.
    pub spawned: Vec<MicrotaskId>,
    pub project_completed: bool,
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn check_fields(fields: &[Field], what: &str) -> Result<(), EngineError> {
    let mut seen = BTreeSet::new();
    for field in fields {
        if !is_identifier(&field.name) {
            return Err(EngineError::BadSchema(format!("{what}: invalid field name {:?}", field.name)));
        }
        if !field.ty.is_known() {
            return Err(EngineError::BadSchema(format!("{what}: field {} has unknown type {:?}", field.name, field.ty.as_str())));
        }
        if !seen.insert(field.name.as_str()) {
            return Err(EngineError::BadSchema(format!("{what}: duplicate field {}", field.name)));
        }
    }
    Ok(())
}

fn validate_spec(spec: &ProjectSpec) -> Result<(), EngineError> {
    if spec.endpoints.is_empty() {
        return Err(EngineError::EmptyProject);
    }
    let mut routes = BTreeSet::new();
    let mut names = BTreeSet::new();
    for e in &spec.endpoints {
        if !e.path.starts_with('/') {
            return Err(EngineError::BadSchema(format!("path {:?} must start with '/'", e.path)));
        }
        if !is_identifier(&e.name) {
            return Err(EngineError::BadSchema(format!("invalid endpoint name {:?}", e.name)));
        }
        check_fields(&e.request_schema, &e.name)?;
        check_fields(&e.response_schema, &e.name)?;
        if !routes.insert((e.method, e.path.as_str())) {
            return Err(EngineError::DuplicateEndpoint(format!("{} {}", e.method, e.path)));
        }
        if !names.insert(e.name.as_str()) {
            return Err(EngineError::DuplicateEndpoint(e.name.clone()));
        }
    }
    Ok(())
}

fn check_assertions(function: &FunctionSpec, assertions: &[Assertion]) -> Result<(), EngineError> {
    if assertions.is_empty() {
        return Err(EngineError::EmptyAssertions);
    }
    for a in assertions {
        if a.args.len() != function.params.len() {
            return Err(EngineError::ArityMismatch { expected: function.params.len(), got: a.args.len() });
        }
    }
    Ok(())
}

fn canonical_assertions(assertions: &[Assertion]) -> String {
    crate::value::to_canonical(assertions)
}

impl Txn<'_> {
    fn function(&self, id: FunctionId) -> Result<&FunctionSpec, EngineError> {
        self.state.functions.get(&id).ok_or_else(|| EngineError::UnknownFunction(id.to_string()))
    }

    fn behavior(&self, id: BehaviorId) -> Result<&Behavior, EngineError> {
        self.state.behaviors.get(&id).ok_or_else(|| EngineError::UnknownBehavior(id.to_string()))
    }

    pub(crate) fn create_project(&mut self, spec: ProjectSpec) -> Result<ProjectId, EngineError> {
        validate_spec(&spec)?;
        let project_id = self.state.next_project_id();
        self.emit(EventBody::ProjectCreated { project_id, spec: spec.clone() })?;
        for endpoint in &spec.endpoints {
            let function = FunctionSpec {
                id: self.state.next_function_id(),
                project_id,
                name: endpoint.name.clone(),
                params: endpoint.request_schema.clone(),
                return_type: ScalarType::Object,
                description: endpoint.description.clone(),
                origin: FunctionOrigin::EndpointRoot { endpoint: format!("{} {}", endpoint.method, endpoint.path) },
                state: FunctionState::Specified,
                behavior_ids: Vec::new(),
                no_more_declarers: BTreeSet::new(),
                open_failure: None,
            };
            let id = function.id;
            self.emit(EventBody::FunctionSpecAdded { function })?;
            self.queue(id, MicrotaskPayload::IdentifyBehavior)?;
        }
        Ok(project_id)
    }

    pub(crate) fn submit(&mut self, submission: Submission) -> Result<SubmitResult, EngineError> {
        let Submission { microtask_id, worker_id, body } = submission;
        if !self.state.workers.contains_key(&worker_id) {
            return Err(EngineError::UnknownWorker(worker_id.to_string()));
        }
        self.check_assignee(worker_id, microtask_id)?;
        let mt = self.state.microtasks[&microtask_id].clone();
        if body.kind() != mt.kind() {
            return Err(EngineError::KindMismatch { expected: mt.kind(), got: body.kind() });
        }

        let function_id = mt.function_id;
        let outcome = match (&mt.payload, &body) {
            (MicrotaskPayload::IdentifyBehavior, SubmissionBody::IdentifyBehavior { new_statement, no_more_behaviors }) => {
                self.on_identify(function_id, microtask_id, worker_id, new_statement.as_deref(), *no_more_behaviors)?
            }
            (MicrotaskPayload::WriteTest { behavior_id, .. }, SubmissionBody::WriteTest { assertions }) => {
                self.on_test(function_id, *behavior_id, worker_id, assertions)?
            }
            (MicrotaskPayload::ImplementBehavior { .. }, SubmissionBody::ImplementBehavior { implementation }) => {
                self.on_implement(function_id, worker_id, implementation)?
            }
            (MicrotaskPayload::DebugFailure { .. }, SubmissionBody::DebugFailure { outcome }) => {
                self.on_debug(function_id, worker_id, outcome)?
            }
            (
                MicrotaskPayload::ResolveConflict { conflict_id },
                SubmissionBody::ResolveConflict { edited_statements, edited_tests },
            ) => self.on_resolve(*conflict_id, worker_id, edited_statements, edited_tests)?,
            _ => unreachable!("kinds checked above"),
        };
        self.emit(EventBody::SubmissionApplied { microtask_id, worker_id, body, outcome })?;
        self.settle(mt.project_id)?;
        let project_completed = self.state.projects[&mt.project_id].state == ProjectState::Complete;
        Ok(SubmitResult { outcome, spawned: self.spawned.clone(), project_completed })
    }

    fn on_identify(
        &mut self,
        function_id: FunctionId,
        microtask_id: MicrotaskId,
        worker: WorkerId,
        statement: Option<&str>,
        no_more: bool,
    ) -> Result<SubmissionOutcome, EngineError> {
        match (statement, no_more) {
            (Some(statement), false) => {
                let statement = statement.trim();
                if statement.is_empty() {
                    return Err(EngineError::EmptyStatement);
                }
                self.check_statement_unique(function_id, statement, None)?;
                let behavior = Behavior {
                    id: self.state.next_behavior_id(),
                    function_id,
                    statement: statement.to_string(),
                    state: BehaviorState::Identified,
                    test_id: None,
                    revision_pending: false,
                    identified_by: microtask_id,
                    author_worker_id: worker,
                };
                let behavior_id = behavior.id;
                self.emit(EventBody::BehaviorAdded { behavior })?;
                self.queue(function_id, MicrotaskPayload::WriteTest { behavior_id, revision: false })?;
                self.queue(function_id, MicrotaskPayload::IdentifyBehavior)?;
            }
            (None, true) => {
                let function = self.function(function_id)?;
                if !self.state.behaviors_of(function_id).any(|b| b.state != BehaviorState::Retired) {
                    return Err(EngineError::NoBehaviors);
                }
                if function.no_more_declarers.contains(&worker) {
                    return Err(EngineError::AlreadyDeclared);
                }
                if function.no_more_declarations() + 1 < self.config.scheduler.identify_quorum {
                    self.queue(function_id, MicrotaskPayload::IdentifyBehavior)?;
                }
            }
            _ => {
                return Err(EngineError::MalformedBody(
                    "exactly one of newStatement or noMoreBehaviors must be given".to_string(),
                ))
            }
        }
        Ok(SubmissionOutcome::Completed)
    }

    fn check_statement_unique(
        &self,
        function_id: FunctionId,
        statement: &str,
        except: Option<BehaviorId>,
    ) -> Result<(), EngineError> {
        let taken = self
            .state
            .behaviors_of(function_id)
            .any(|b| Some(b.id) != except && b.state != BehaviorState::Retired && b.statement == statement);
        if taken {
            return Err(EngineError::DuplicateBehavior(statement.to_string()));
        }
        Ok(())
    }

    fn store_test(&mut self, behavior_id: BehaviorId, worker: WorkerId, assertions: &[Assertion]) -> Result<(), EngineError> {
        let behavior = self.behavior(behavior_id)?;
        let test = match self.state.test_of(behavior) {
            Some(prev) => TestArtifact {
                id: prev.id,
                behavior_id,
                assertions: assertions.to_vec(),
                author_worker_id: worker,
                version: prev.version + 1,
            },
            None => TestArtifact {
                id: self.state.next_test_id(),
                behavior_id,
                assertions: assertions.to_vec(),
                author_worker_id: worker,
                version: 1,
            },
        };
        self.emit(EventBody::TestStored { test })
    }

    fn on_test(
        &mut self,
        function_id: FunctionId,
        behavior_id: BehaviorId,
        worker: WorkerId,
        assertions: &[Assertion],
    ) -> Result<SubmissionOutcome, EngineError> {
        check_assertions(self.function(function_id)?, assertions)?;
        if self.behavior(behavior_id)?.state == BehaviorState::Retired {
            // Retired while the test was being written; nothing to attach it to.
            return Ok(SubmissionOutcome::Completed);
        }
        self.store_test(behavior_id, worker, assertions)?;
        self.reconcile_conflicts(function_id)?;
        if self.behavior(behavior_id)?.state == BehaviorState::Tested {
            self.queue(function_id, MicrotaskPayload::ImplementBehavior { behavior_id })?;
        }
        Ok(SubmissionOutcome::Completed)
    }

    fn store_implementation(
        &mut self,
        function_id: FunctionId,
        worker: WorkerId,
        draft: &ImplementationDraft,
    ) -> Result<(), EngineError> {
        let function = self.function(function_id)?.clone();
        match &draft.body {
            ImplementationBody::Table { table } => {
                for entry in &table.entries {
                    if entry.args.len() != function.params.len() {
                        return Err(EngineError::ArityMismatch { expected: function.params.len(), got: entry.args.len() });
                    }
                }
            }
            ImplementationBody::Source { language_tag, .. } => {
                if language_tag.is_empty() || language_tag == "table" {
                    return Err(EngineError::BadSchema(format!("invalid languageTag {language_tag:?}")));
                }
            }
        }

        let mut declared: BTreeMap<&str, &crate::model::PseudoCallDecl> = BTreeMap::new();
        for decl in &draft.declared_pseudo_calls {
            if !is_identifier(&decl.name) {
                return Err(EngineError::BadSchema(format!("invalid pseudo-call name {:?}", decl.name)));
            }
            let unknown = decl.params.iter().map(|p| &p.ty).chain([&decl.return_type]).find(|t| !t.is_known());
            if let Some(ty) = unknown {
                return Err(EngineError::UnknownPseudoCallType { name: decl.name.clone(), ty: ty.as_str().to_string() });
            }
            if let Some(prev) = declared.insert(&decl.name, decl) {
                let same = prev.return_type == decl.return_type
                    && prev.params.len() == decl.params.len()
                    && prev.params.iter().zip(&decl.params).all(|(a, b)| a.ty == b.ty);
                if !same {
                    return Err(EngineError::DuplicateFunctionName(decl.name.clone()));
                }
            }
        }

        let mut new_functions = Vec::new();
        for decl in declared.values() {
            match self.state.function_by_name(function.project_id, &decl.name) {
                Some(existing) if existing.signature_matches(&decl.params, &decl.return_type) => {}
                Some(_) => return Err(EngineError::DuplicateFunctionName(decl.name.clone())),
                None => new_functions.push(*decl),
            }
        }
        for decl in new_functions {
            let helper = FunctionSpec {
                id: self.state.next_function_id(),
                project_id: function.project_id,
                name: decl.name.clone(),
                params: decl.params.clone(),
                return_type: decl.return_type.clone(),
                description: decl.description.clone(),
                origin: FunctionOrigin::PseudoCall { spawned_by: function_id },
                state: FunctionState::Specified,
                behavior_ids: Vec::new(),
                no_more_declarers: BTreeSet::new(),
                open_failure: None,
            };
            let id = helper.id;
            self.emit(EventBody::FunctionSpecAdded { function: helper })?;
            self.queue(id, MicrotaskPayload::IdentifyBehavior)?;
        }

        let version = self.state.implementations.get(&function_id).map(|i| i.version).unwrap_or(0) + 1;
        let implementation = Implementation {
            function_id,
            body: draft.body.clone(),
            version,
            declared_pseudo_calls: draft.declared_pseudo_calls.clone(),
            author_worker_id: worker,
        };
        self.emit(EventBody::ImplementationStored { implementation })
    }

    /// Runs the current implementation against the active suite and
    /// records the outcome. No implementation means nothing to run.
    fn run_suite(&mut self, function_id: FunctionId) -> Result<Option<FailureReport>, EngineError> {
        let Some(implementation) = self.state.implementations.get(&function_id) else { return Ok(None) };
        let assertions = self.state.suite_assertions(function_id);
        let report = self.harness.run_suite(implementation, &assertions)?;
        let failure = build_failure_report(&report);
        self.emit(EventBody::SuiteRan { report, failure: failure.clone() })?;
        Ok(failure)
    }

    fn on_implement(
        &mut self,
        function_id: FunctionId,
        worker: WorkerId,
        draft: &ImplementationDraft,
    ) -> Result<SubmissionOutcome, EngineError> {
        self.store_implementation(function_id, worker, draft)?;
        if let Some(report) = self.run_suite(function_id)? {
            self.queue(function_id, MicrotaskPayload::DebugFailure { report })?;
        }
        Ok(SubmissionOutcome::Completed)
    }

    fn disputable(&self, function_id: FunctionId, behavior_id: BehaviorId) -> Result<(), EngineError> {
        let report = self.function(function_id)?.open_failure.as_ref().ok_or(EngineError::NoOpenFailure)?;
        let behavior = self.behavior(behavior_id)?;
        let in_report = report.failures.iter().any(|f| f.behavior_id == behavior_id);
        let active = matches!(behavior.state, BehaviorState::Tested | BehaviorState::Passing) && !behavior.revision_pending;
        if !in_report || !active || behavior.function_id != function_id {
            return Err(EngineError::UnknownBehavior(behavior_id.to_string()));
        }
        Ok(())
    }

    fn on_debug(
        &mut self,
        function_id: FunctionId,
        worker: WorkerId,
        outcome: &DebugOutcome,
    ) -> Result<SubmissionOutcome, EngineError> {
        if self.function(function_id)?.open_failure.is_none() {
            return Err(EngineError::NoOpenFailure);
        }
        match outcome {
            DebugOutcome::FixedImplementation(draft) => self.store_implementation(function_id, worker, draft)?,
            DebugOutcome::DisputeTest { behavior_id, .. } => {
                self.disputable(function_id, *behavior_id)?;
                self.queue(function_id, MicrotaskPayload::WriteTest { behavior_id: *behavior_id, revision: true })?;
            }
            DebugOutcome::DisputeBehavior { behavior_id, reason } => {
                self.disputable(function_id, *behavior_id)?;
                self.emit(EventBody::BehaviorRetired { behavior_id: *behavior_id, reason: reason.clone() })?;
            }
        }
        Ok(match self.run_suite(function_id)? {
            Some(_) => SubmissionOutcome::Requeued,
            None => SubmissionOutcome::Completed,
        })
    }

    fn on_resolve(
        &mut self,
        conflict_id: ConflictId,
        worker: WorkerId,
        statements: &BTreeMap<BehaviorId, String>,
        tests: &BTreeMap<BehaviorId, Vec<Assertion>>,
    ) -> Result<SubmissionOutcome, EngineError> {
        let conflict = self
            .state
            .conflicts
            .get(&conflict_id)
            .filter(|c| c.state == ConflictState::Open)
            .cloned()
            .ok_or_else(|| EngineError::UnknownConflict(conflict_id.to_string()))?;
        let function = self.function(conflict.function_id)?.clone();
        for behavior_id in statements.keys().chain(tests.keys()) {
            if !conflict.involves(*behavior_id) {
                return Err(EngineError::UnknownBehavior(behavior_id.to_string()));
            }
        }

        let mut changed = false;
        for (behavior_id, statement) in statements {
            let statement = statement.trim();
            if statement.is_empty() {
                return Err(EngineError::EmptyStatement);
            }
            if self.behavior(*behavior_id)?.statement != statement {
                self.check_statement_unique(function.id, statement, Some(*behavior_id))?;
                self.emit(EventBody::BehaviorRevised { behavior_id: *behavior_id, statement: statement.to_string() })?;
                changed = true;
            }
        }
        for (behavior_id, assertions) in tests {
            check_assertions(&function, assertions)?;
            let current = self.state.test_of(self.behavior(*behavior_id)?).map(|t| canonical_assertions(&t.assertions));
            if current.as_deref() != Some(canonical_assertions(assertions).as_str()) {
                self.store_test(*behavior_id, worker, assertions)?;
                changed = true;
            }
        }
        if !changed || self.witness_remains(&conflict) {
            return Err(EngineError::UnresolvedContradiction);
        }
        self.emit(EventBody::ConflictResolved { conflict_id, superseded: false })?;
        self.reconcile_conflicts(function.id)?;
        let resumed = [conflict.first.behavior_id, conflict.second.behavior_id]
            .into_iter()
            .find(|b| self.state.behaviors[b].state == BehaviorState::Tested);
        if let Some(behavior_id) = resumed {
            self.queue(function.id, MicrotaskPayload::ImplementBehavior { behavior_id })?;
        }
        Ok(SubmissionOutcome::Completed)
    }

    /// Whether the two behaviors still disagree on the conflict's args.
    fn witness_remains(&self, conflict: &Conflict) -> bool {
        let key = Value::List(conflict.args.clone()).canonical();
        let expectations = |behavior_id: BehaviorId| -> Vec<String> {
            self.state
                .behaviors
                .get(&behavior_id)
                .and_then(|b| self.state.test_of(b))
                .map(|t| {
                    t.assertions
                        .iter()
                        .filter(|a| Value::List(a.args.clone()).canonical() == key)
                        .map(|a| a.expected.canonical())
                        .collect()
                })
                .unwrap_or_default()
        };
        let first = expectations(conflict.first.behavior_id);
        let second = expectations(conflict.second.behavior_id);
        first.iter().any(|a| second.iter().any(|b| a != b))
    }

    /// Brings open conflicts of `function_id` in line with the
    /// contradictions present now: stale ones close, new ones open.
    fn reconcile_conflicts(&mut self, function_id: FunctionId) -> Result<(), EngineError> {
        let found = detect_contradictions(&self.state.conflict_scope_assertions(function_id));
        let open: Vec<Conflict> = self.state.open_conflicts_of(function_id).cloned().collect();
        for conflict in &open {
            if found.iter().any(|c| c.matches(conflict)) {
                continue;
            }
            if conflict.ticket.is_some() {
                return Err(EngineError::Internal(format!("ticketed {} no longer matches its tests", conflict.id)));
            }
            self.emit(EventBody::ConflictResolved { conflict_id: conflict.id, superseded: true })?;
        }
        for contradiction in found {
            if open.iter().any(|c| contradiction.matches(c)) {
                continue;
            }
            let conflict = Conflict {
                id: self.state.next_conflict_id(),
                function_id,
                first: contradiction.first,
                second: contradiction.second,
                args: contradiction.args,
                expected_first: contradiction.expected_first,
                expected_second: contradiction.expected_second,
                state: ConflictState::Open,
                ticket: None,
            };
            self.emit(EventBody::ConflictOpened { conflict })?;
        }
        Ok(())
    }

    /// Tickets open conflicts whose behaviors are not already under an
    /// open ticket, so no resolution can invalidate another.
    fn ticket_conflicts(&mut self, function_id: FunctionId) -> Result<(), EngineError> {
        let candidates: Vec<ConflictId> =
            self.state.open_conflicts_of(function_id).filter(|c| c.ticket.is_none()).map(|c| c.id).collect();
        for id in candidates {
            if self.behaviors_busy(id) {
                continue;
            }
            self.open_resolution(id)?;
        }
        Ok(())
    }

    fn behaviors_busy(&self, id: ConflictId) -> bool {
        let conflict = &self.state.conflicts[&id];
        self.state.conflicts.values().any(|c| {
            c.id != id
                && c.state == ConflictState::Open
                && c.ticket.is_some()
                && (c.involves(conflict.first.behavior_id) || c.involves(conflict.second.behavior_id))
        })
    }

    pub(crate) fn open_resolution(&mut self, id: ConflictId) -> Result<MicrotaskId, EngineError> {
        let conflict = self
            .state
            .conflicts
            .get(&id)
            .filter(|c| c.state == ConflictState::Open)
            .ok_or_else(|| EngineError::UnknownConflict(id.to_string()))?;
        if conflict.ticket.is_some() || self.behaviors_busy(id) {
            return Err(EngineError::AlreadyTicketed);
        }
        let function_id = conflict.function_id;
        self.queue(function_id, MicrotaskPayload::ResolveConflict { conflict_id: id })
    }

    /// Queues implementation work for tested behaviors nobody is working on.
    fn ensure_progress(&mut self, function_id: FunctionId) -> Result<(), EngineError> {
        if self.state.open_conflicts_of(function_id).next().is_some()
            || self.state.open_microtasks_of(function_id).any(|m| m.kind() == MicrotaskKind::ImplementBehavior)
        {
            return Ok(());
        }
        let waiting = self
            .state
            .behaviors_of(function_id)
            // a disputed test gets its implement task once the rewrite lands
            .find(|b| b.state == BehaviorState::Tested && b.test_id.is_some() && !b.revision_pending)
            .map(|b| b.id);
        if let Some(behavior_id) = waiting {
            self.queue(function_id, MicrotaskPayload::ImplementBehavior { behavior_id })?;
        }
        Ok(())
    }

    pub(crate) fn check_completion(&mut self, function_id: FunctionId) -> Result<bool, EngineError> {
        let function = self.function(function_id)?;
        if function.state == FunctionState::Complete {
            return Ok(true);
        }
        let live: Vec<&Behavior> =
            self.state.behaviors_of(function_id).filter(|b| b.state != BehaviorState::Retired).collect();
        let done = !live.is_empty()
            && live.iter().all(|b| b.state == BehaviorState::Passing)
            && function.no_more_declarations() >= self.config.scheduler.identify_quorum
            && function.open_failure.is_none()
            && self.state.open_microtasks_of(function_id).next().is_none()
            && self.state.open_conflicts_of(function_id).next().is_none();
        if !done {
            return Ok(false);
        }
        let project_id = function.project_id;
        self.emit(EventBody::FunctionCompleted { function_id })?;

        let project = &self.state.projects[&project_id];
        let all_complete =
            project.function_ids.iter().all(|f| self.state.functions[f].state == FunctionState::Complete);
        if all_complete && project.state == ProjectState::Active {
            self.emit(EventBody::ProjectCompleted { project_id })?;
        }
        Ok(true)
    }

    /// Follow-up rules after a submission, applied to every open function
    /// of the project.
    fn settle(&mut self, project_id: ProjectId) -> Result<(), EngineError> {
        let functions: Vec<FunctionId> = self.state.projects[&project_id]
            .function_ids
            .iter()
            .copied()
            .filter(|f| self.state.functions[f].state != FunctionState::Complete)
            .collect();
        for &f in &functions {
            self.reconcile_conflicts(f)?;
            self.ticket_conflicts(f)?;
            self.ensure_progress(f)?;
        }
        for &f in &functions {
            self.check_completion(f)?;
        }
        Ok(())
    }
}

