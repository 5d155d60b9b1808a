mod common;

use common::*;
use microcrowd_core::model::{
    BehaviorState, ConflictState, FunctionState, HttpMethod, MicrotaskKind, MicrotaskPayload, MicrotaskState,
    ProjectSpec, PseudoCallDecl, ScalarType, Field,
};
use microcrowd_core::{
    DebugOutcome, EngineConfig, EngineError, SchedulerConfig, SubmissionBody, SubmissionOutcome, Value,
};

#[test]
fn todo_project_gets_one_root_function_and_identify_task_per_endpoint() {
    let (rig, project) = Rig::with_project(todo_spec());
    let state = rig.engine.state();
    assert_eq!(state.projects[&project].function_ids.len(), 4);
    assert!(state.functions.values().all(|f| f.state == FunctionState::Specified));
    assert_eq!(state.queue.len(), 4);
    assert!(state.microtasks.values().all(|m| m.kind() == MicrotaskKind::IdentifyBehavior));
}

#[test]
fn project_spec_validation() {
    let mut rig = Rig::new(EngineConfig::default());
    let empty = ProjectSpec { name: "x".into(), endpoints: vec![] };
    assert!(matches!(rig.engine.create_project(empty, 0), Err(EngineError::EmptyProject)));

    let mut dup = todo_spec();
    dup.endpoints[1] = endpoint(HttpMethod::Post, "/todos", "other", &[]);
    assert!(matches!(rig.engine.create_project(dup, 0), Err(EngineError::DuplicateEndpoint(_))));

    let mut bad = todo_spec();
    bad.endpoints[0].request_schema.push(Field::new("when", ScalarType::Other("date".into())));
    assert!(matches!(rig.engine.create_project(bad, 0), Err(EngineError::BadSchema(_))));
    assert_eq!(rig.engine.log().last_seq(), 0, "rejected creations leave no events");
}

#[test]
fn submission_kind_and_assignee_are_checked() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let b1 = rig.identify("given 1, returns 2");
    let (w, m) = rig.claim(MicrotaskKind::WriteTest, |_| true);
    let stranger = rig.worker();
    let before = rig.engine.log().last_seq();

    let err = rig.submit(w, m, SubmissionBody::new_statement("wrong kind")).unwrap_err();
    assert!(matches!(err, EngineError::KindMismatch { .. }));

    let err = rig.submit(stranger, m, test_body(&[(n(1), n(2))])).unwrap_err();
    assert!(matches!(err, EngineError::NotAssignee));
    assert_eq!(rig.engine.log().last_seq(), before);

    rig.submit(w, m, test_body(&[(n(1), n(2))])).unwrap();
    assert_eq!(rig.engine.state().behaviors[&b1].state, BehaviorState::Tested);
    let err = rig.submit(w, m, test_body(&[(n(1), n(2))])).unwrap_err();
    assert!(matches!(err, EngineError::StaleMicrotask));
}

#[test]
fn new_statement_spawns_test_and_respawns_identify() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let (w, m) = rig.claim_kind(MicrotaskKind::IdentifyBehavior);
    let result = rig.submit(w, m, SubmissionBody::new_statement("given empty list, when add('milk'), then list has 1 item")).unwrap();
    assert_eq!(rig.kinds(&result.spawned), vec![MicrotaskKind::WriteTest, MicrotaskKind::IdentifyBehavior]);
    let behavior = rig.engine.state().behaviors.values().next().unwrap();
    assert_eq!(behavior.state, BehaviorState::Identified);
    let function = &rig.engine.state().functions[&behavior.function_id];
    assert_eq!(function.state, FunctionState::InProgress);
}

#[test]
fn duplicate_and_empty_statements_are_rejected() {
    let (mut rig, _) = Rig::with_project(single_spec());
    rig.identify("doubles its input");
    let (w, m) = rig.claim_kind(MicrotaskKind::IdentifyBehavior);
    assert!(matches!(rig.submit(w, m, SubmissionBody::new_statement("doubles its input")), Err(EngineError::DuplicateBehavior(_))));
    assert!(matches!(rig.submit(w, m, SubmissionBody::new_statement("   ")), Err(EngineError::EmptyStatement)));
}

#[test]
fn no_more_behaviors_rules() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let (w, m) = rig.claim_kind(MicrotaskKind::IdentifyBehavior);
    assert!(matches!(rig.submit(w, m, SubmissionBody::no_more_behaviors()), Err(EngineError::NoBehaviors)));
    rig.submit(w, m, SubmissionBody::new_statement("one")).unwrap();
    rig.identify("two");
    let (w, m) = rig.claim_kind(MicrotaskKind::IdentifyBehavior);
    let result = rig.submit(w, m, SubmissionBody::no_more_behaviors()).unwrap();
    assert!(result.spawned.is_empty(), "quorum 1 closes the identify stream");
    let f = rig.engine.state().functions.values().next().unwrap();
    assert_eq!(f.no_more_declarations(), 1);
}

#[test]
fn identify_quorum_keeps_stream_open_for_other_workers() {
    let config = EngineConfig { scheduler: SchedulerConfig { identify_quorum: 2, ..Default::default() }, ..Default::default() };
    let mut rig = Rig::new(config);
    rig.engine.create_project(single_spec(), rig.now).unwrap();
    rig.identify("one");
    let (w, m) = rig.claim_kind(MicrotaskKind::IdentifyBehavior);
    let result = rig.submit(w, m, SubmissionBody::no_more_behaviors()).unwrap();
    assert_eq!(rig.kinds(&result.spawned), vec![MicrotaskKind::IdentifyBehavior]);
    // The declaring worker is not offered the reopened identify task.
    assert!(rig.fetch(w).map(|a| a.kind) != Some(MicrotaskKind::IdentifyBehavior));
}

#[test]
fn valid_test_queues_implementation() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let b1 = rig.identify("doubles");
    let result = rig.write_test(b1, test_body(&[(n(1), n(2))])).unwrap();
    assert_eq!(rig.kinds(&result.spawned), vec![MicrotaskKind::ImplementBehavior]);
    assert_eq!(rig.engine.state().behaviors[&b1].state, BehaviorState::Tested);
}

#[test]
fn arity_and_empty_tests_are_rejected() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let b1 = rig.identify("doubles");
    let two_args = SubmissionBody::WriteTest {
        assertions: vec![microcrowd_core::model::Assertion::new(vec![n(1), n(2)], n(3))],
    };
    assert!(matches!(rig.write_test(b1, two_args), Err(EngineError::ArityMismatch { expected: 1, got: 2 })));
    assert!(matches!(rig.write_test(b1, SubmissionBody::WriteTest { assertions: vec![] }), Err(EngineError::EmptyAssertions)));
}

#[test]
fn contradicting_test_opens_conflict_instead_of_implementation() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let b1 = rig.identify("one maps to three");
    let b2 = rig.identify("one maps to two");
    rig.write_test(b1, test_body(&[(Value::from(vec![n(1)]), n(3))])).unwrap();
    let result = rig.write_test(b2, test_body(&[(Value::from(vec![n(1)]), n(2))])).unwrap();

    assert_eq!(rig.kinds(&result.spawned), vec![MicrotaskKind::ResolveConflict]);
    let state = rig.engine.state();
    assert_eq!(state.behaviors[&b1].state, BehaviorState::Conflicted);
    assert_eq!(state.behaviors[&b2].state, BehaviorState::Conflicted);
    let conflict = state.conflicts.values().next().unwrap();
    assert_eq!(conflict.state, ConflictState::Open);
    assert_eq!(conflict.ticket, Some(result.spawned[0]));

    // The ticket exists already; another request is refused.
    let id = conflict.id;
    assert!(matches!(rig.engine.open_resolution(id, rig.now), Err(EngineError::AlreadyTicketed)));
}

fn tested_pair(rig: &mut Rig) -> (microcrowd_core::BehaviorId, microcrowd_core::BehaviorId) {
    let b1 = rig.identify("doubles small numbers");
    let b2 = rig.identify("doubles larger numbers");
    rig.write_test(b1, test_body(&[(n(1), n(2)), (n(2), n(4))])).unwrap();
    rig.write_test(b2, test_body(&[(n(10), n(20))])).unwrap();
    (b1, b2)
}

#[test]
fn passing_table_implementation_marks_behaviors_passing() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let b1 = rig.identify("doubles");
    rig.write_test(b1, test_body(&[(n(1), n(2)), (n(2), n(4))])).unwrap();
    let (w, m) = rig.claim_kind(MicrotaskKind::ImplementBehavior);
    let result = rig.submit(w, m, implement(table_body(n(0), &[(n(1), n(2)), (n(2), n(4))]))).unwrap();
    assert!(result.spawned.is_empty());
    assert_eq!(rig.engine.state().behaviors[&b1].state, BehaviorState::Passing);
}

#[test]
fn failing_implementation_spawns_debug_with_report() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let (_b1, b2) = tested_pair(&mut rig);
    let (w, m) = rig.claim_kind(MicrotaskKind::ImplementBehavior);
    let result = rig.submit(w, m, implement(table_body(n(0), &[(n(1), n(2)), (n(2), n(4))]))).unwrap();
    assert_eq!(rig.kinds(&result.spawned), vec![MicrotaskKind::DebugFailure]);
    match &rig.engine.state().microtasks[&result.spawned[0]].payload {
        MicrotaskPayload::DebugFailure { report } => {
            assert_eq!(report.failures.len(), 1);
            assert_eq!(report.failures[0].behavior_id, b2);
            assert_eq!(report.failures[0].actual, Some(n(0)));
        }
        other => panic!("unexpected payload {other:?}"),
    }
}

#[test]
fn pseudo_call_creates_helper_function() {
    let (mut rig, project) = Rig::with_project(single_spec());
    let b1 = rig.identify("doubles");
    rig.write_test(b1, test_body(&[(n(1), n(2))])).unwrap();
    let (w, m) = rig.claim_kind(MicrotaskKind::ImplementBehavior);
    let decl = PseudoCallDecl {
        name: "validateTitle".into(),
        params: vec![Field::new("title", ScalarType::String)],
        return_type: ScalarType::Boolean,
        description: "checks a title".into(),
    };
    let draft = table_body(n(0), &[(n(1), n(2))]).with_pseudo_call(decl.clone());
    let result = rig.submit(w, m, implement(draft)).unwrap();
    assert_eq!(rig.kinds(&result.spawned), vec![MicrotaskKind::IdentifyBehavior]);
    let helper = rig.engine.state().function_by_name(project, "validateTitle").unwrap();
    assert_eq!(helper.state, FunctionState::Specified);

    // Same name with another signature collides.
    let b2 = rig.identify("doubles again");
    rig.write_test(b2, test_body(&[(n(3), n(6))])).unwrap();
    let (w, m) = rig.claim_kind(MicrotaskKind::ImplementBehavior);
    let clash = PseudoCallDecl { return_type: ScalarType::String, ..decl.clone() };
    let err = rig.submit(w, m, implement(table_body(n(0), &[]).with_pseudo_call(clash))).unwrap_err();
    assert!(matches!(err, EngineError::DuplicateFunctionName(_)));
    let unknown = PseudoCallDecl { return_type: ScalarType::Other("date".into()), name: "when".into(), ..decl };
    let err = rig.submit(w, m, implement(table_body(n(0), &[]).with_pseudo_call(unknown))).unwrap_err();
    assert!(matches!(err, EngineError::UnknownPseudoCallType { .. }));
}

fn into_debug(rig: &mut Rig) -> (microcrowd_core::BehaviorId, microcrowd_core::BehaviorId) {
    let pair = tested_pair(rig);
    let (w, m) = rig.claim_kind(MicrotaskKind::ImplementBehavior);
    rig.submit(w, m, implement(table_body(n(0), &[(n(1), n(2)), (n(2), n(4))]))).unwrap();
    pair
}

#[test]
fn fixed_implementation_completes_debug() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let (b1, b2) = into_debug(&mut rig);
    let (w, m) = rig.claim_kind(MicrotaskKind::DebugFailure);
    let fix = table_body(n(0), &[(n(1), n(2)), (n(2), n(4)), (n(10), n(20))]);
    let result = rig.submit(w, m, SubmissionBody::DebugFailure { outcome: DebugOutcome::FixedImplementation(fix) }).unwrap();
    assert_eq!(result.outcome, SubmissionOutcome::Completed);
    let state = rig.engine.state();
    assert_eq!(state.behaviors[&b1].state, BehaviorState::Passing);
    assert_eq!(state.behaviors[&b2].state, BehaviorState::Passing);
    assert!(state.functions.values().next().unwrap().open_failure.is_none());
}

#[test]
fn failed_fix_requeues_same_debug_task() {
    let (mut rig, _) = Rig::with_project(single_spec());
    into_debug(&mut rig);
    let (w, m) = rig.claim_kind(MicrotaskKind::DebugFailure);
    let still_wrong = table_body(n(0), &[(n(1), n(2)), (n(2), n(4)), (n(10), n(21))]);
    let result = rig.submit(w, m, SubmissionBody::DebugFailure { outcome: DebugOutcome::FixedImplementation(still_wrong) }).unwrap();
    assert_eq!(result.outcome, SubmissionOutcome::Requeued);
    let mt = &rig.engine.state().microtasks[&m];
    assert_eq!(mt.state, MicrotaskState::Queued);
    assert_eq!(mt.attempt, 2);
}

#[test]
fn dispute_test_spawns_revision() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let (_, b2) = into_debug(&mut rig);
    let (w, m) = rig.claim_kind(MicrotaskKind::DebugFailure);
    let result = rig
        .submit(w, m, SubmissionBody::DebugFailure { outcome: DebugOutcome::DisputeTest { behavior_id: b2, reason: "wrong".into() } })
        .unwrap();
    assert_eq!(result.outcome, SubmissionOutcome::Completed, "suite passes once b2 is set aside");
    let revision = result
        .spawned
        .iter()
        .find(|id| {
            matches!(rig.engine.state().microtasks[*id].payload, MicrotaskPayload::WriteTest { behavior_id, revision: true } if behavior_id == b2)
        })
        .copied();
    assert!(revision.is_some());
    assert!(rig.engine.state().behaviors[&b2].revision_pending);
    let implements_b2 = |rig: &Rig, ids: &[microcrowd_core::MicrotaskId]| {
        ids.iter().any(|id| {
            matches!(rig.engine.state().microtasks[id].payload, MicrotaskPayload::ImplementBehavior { behavior_id } if behavior_id == b2)
        })
    };
    assert!(!implements_b2(&rig, &result.spawned), "no new implement work while the test is being rewritten");

    let before = rig.engine.state().tests.values().find(|t| t.behavior_id == b2).unwrap().version;
    let rewrite = rig.write_test(b2, test_body(&[(n(10), n(20))])).unwrap();
    let after = rig.engine.state().tests.values().find(|t| t.behavior_id == b2).unwrap().version;
    assert_eq!(after, before + 1);
    assert!(implements_b2(&rig, &rewrite.spawned));
}

#[test]
fn disputed_sole_behavior_waits_for_its_rewrite() {
    // With no other work on the function, the progress rule must not keep
    // queueing implement tasks that can never make the disputed behavior pass.
    let (mut rig, _) = Rig::with_project(single_spec());
    let b1 = rig.identify("doubles");
    rig.write_test(b1, test_body(&[(n(1), n(3))])).unwrap();
    let (w, m) = rig.claim_kind(MicrotaskKind::ImplementBehavior);
    rig.submit(w, m, implement(table_body(n(0), &[(n(1), n(2))]))).unwrap();
    let (w, m) = rig.claim_kind(MicrotaskKind::DebugFailure);
    let dispute = DebugOutcome::DisputeTest { behavior_id: b1, reason: "1 doubles to 2".into() };
    let result = rig.submit(w, m, SubmissionBody::DebugFailure { outcome: dispute }).unwrap();
    assert_eq!(rig.kinds(&result.spawned), vec![MicrotaskKind::WriteTest]);

    // The implement task queued before the dispute runs an empty suite; it
    // must not hand the same work back to the queue.
    let (w, m) = rig.claim_kind(MicrotaskKind::ImplementBehavior);
    let idle = rig.submit(w, m, implement(table_body(n(0), &[(n(1), n(2))]))).unwrap();
    assert!(!rig.kinds(&idle.spawned).contains(&MicrotaskKind::ImplementBehavior));

    let rewrite = rig.write_test(b1, test_body(&[(n(1), n(2))])).unwrap();
    assert!(rig.kinds(&rewrite.spawned).contains(&MicrotaskKind::ImplementBehavior));
}

#[test]
fn dispute_behavior_retires_it() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let (b1, b2) = into_debug(&mut rig);
    let (w, m) = rig.claim_kind(MicrotaskKind::DebugFailure);
    let body = SubmissionBody::DebugFailure { outcome: DebugOutcome::DisputeBehavior { behavior_id: b2, reason: "not needed".into() } };
    let result = rig.submit(w, m, body).unwrap();
    assert_eq!(result.outcome, SubmissionOutcome::Completed);
    let state = rig.engine.state();
    assert_eq!(state.behaviors[&b2].state, BehaviorState::Retired);
    assert_eq!(state.behaviors[&b1].state, BehaviorState::Passing);
    let f = state.functions.values().next().unwrap();
    assert!(state.suite_assertions(f.id).iter().all(|a| a.behavior_id != b2));

    // A behavior outside the report cannot be disputed.
    let (mut rig2, _) = Rig::with_project(single_spec());
    let (b1, _) = into_debug(&mut rig2);
    let (w, m) = rig2.claim_kind(MicrotaskKind::DebugFailure);
    let body = SubmissionBody::DebugFailure { outcome: DebugOutcome::DisputeBehavior { behavior_id: b1, reason: "x".into() } };
    assert!(matches!(rig2.submit(w, m, body), Err(EngineError::UnknownBehavior(_))));
}

#[test]
fn function_and_project_complete_when_everything_passes() {
    let (mut rig, project) = Rig::with_project(single_spec());
    let b1 = rig.identify("doubles");
    rig.write_test(b1, test_body(&[(n(1), n(2))])).unwrap();
    let (w, m) = rig.claim_kind(MicrotaskKind::ImplementBehavior);
    rig.submit(w, m, implement(table_body(n(0), &[(n(1), n(2))]))).unwrap();
    let f = rig.engine.state().projects[&project].function_ids[0];
    assert!(!rig.engine.check_function_completion(f, rig.now).unwrap(), "identify stream still open");

    let (w, m) = rig.claim_kind(MicrotaskKind::IdentifyBehavior);
    let result = rig.submit(w, m, SubmissionBody::no_more_behaviors()).unwrap();
    assert!(result.project_completed);
    assert_eq!(rig.engine.state().functions[&f].state, FunctionState::Complete);
    assert!(rig.engine.check_function_completion(f, rig.now).unwrap());
}

#[test]
fn conflicted_behavior_blocks_completion() {
    let (mut rig, project) = Rig::with_project(single_spec());
    let b1 = rig.identify("a");
    let b2 = rig.identify("b");
    rig.write_test(b1, test_body(&[(n(1), n(2))])).unwrap();
    rig.write_test(b2, test_body(&[(n(1), n(3))])).unwrap();
    let (w, m) = rig.claim_kind(MicrotaskKind::IdentifyBehavior);
    rig.submit(w, m, SubmissionBody::no_more_behaviors()).unwrap();
    let f = rig.engine.state().projects[&project].function_ids[0];
    assert!(!rig.engine.check_function_completion(f, rig.now).unwrap());
}

fn into_conflict(rig: &mut Rig) -> (microcrowd_core::BehaviorId, microcrowd_core::BehaviorId) {
    let b1 = rig.identify("one maps to two");
    let b2 = rig.identify("one maps to three");
    rig.write_test(b1, test_body(&[(n(1), n(2))])).unwrap();
    rig.write_test(b2, test_body(&[(n(1), n(3))])).unwrap();
    (b1, b2)
}

fn resolve_body(edits: &[(microcrowd_core::BehaviorId, Vec<(i64, i64)>)]) -> SubmissionBody {
    SubmissionBody::ResolveConflict {
        edited_statements: Default::default(),
        edited_tests: edits
            .iter()
            .map(|(b, pairs)| {
                (*b, pairs.iter().map(|(a, e)| microcrowd_core::model::Assertion::new(vec![n(*a)], n(*e))).collect())
            })
            .collect(),
    }
}

#[test]
fn resolution_returns_behaviors_to_implementation() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let (b1, b2) = into_conflict(&mut rig);
    let (w, m) = rig.claim_kind(MicrotaskKind::ResolveConflict);
    let result = rig.submit(w, m, resolve_body(&[(b2, vec![(1, 2)])])).unwrap();
    assert!(rig.kinds(&result.spawned).contains(&MicrotaskKind::ImplementBehavior));
    let state = rig.engine.state();
    assert!(state.conflicts.values().all(|c| c.state == ConflictState::Resolved));
    assert_eq!(state.behaviors[&b1].state, BehaviorState::Tested);
    assert_eq!(state.behaviors[&b2].state, BehaviorState::Tested);
}

#[test]
fn no_op_resolution_is_rejected() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let (b1, b2) = into_conflict(&mut rig);
    let (w, m) = rig.claim_kind(MicrotaskKind::ResolveConflict);
    let before = rig.engine.log().last_seq();
    let err = rig.submit(w, m, resolve_body(&[(b1, vec![(1, 2)])])).unwrap_err();
    assert!(matches!(err, EngineError::UnresolvedContradiction));
    let err = rig.submit(w, m, resolve_body(&[(b2, vec![(1, 3), (5, 5)])])).unwrap_err();
    assert!(matches!(err, EngineError::UnresolvedContradiction), "witness still disagrees");
    assert_eq!(rig.engine.log().last_seq(), before);
}

#[test]
fn resolution_introducing_new_contradiction_opens_it_in_same_commit() {
    let (mut rig, _) = Rig::with_project(single_spec());
    let b3 = rig.identify("five maps to five");
    rig.write_test(b3, test_body(&[(n(5), n(5))])).unwrap();
    let (b1, b2) = into_conflict(&mut rig);
    let (w, m) = rig.claim_kind(MicrotaskKind::ResolveConflict);
    let before = rig.engine.log().last_seq();
    rig.submit(w, m, resolve_body(&[(b2, vec![(1, 2), (5, 6)])])).unwrap();
    let state = rig.engine.state();
    let original = state.conflicts.values().find(|c| c.first.behavior_id == b1).unwrap();
    assert_eq!(original.state, ConflictState::Resolved);
    let fresh = state.conflicts.values().find(|c| c.state == ConflictState::Open).unwrap();
    assert!(fresh.involves(b2) && fresh.involves(b3));
    let commit = &rig.engine.log().events()[before as usize..];
    assert!(commit.iter().any(|e| e.body.kind_name() == "ConflictResolved"));
    assert!(commit.iter().any(|e| e.body.kind_name() == "ConflictOpened"));
    assert!(commit.last().unwrap().tx_end && commit.iter().all(|e| e.tx == before + 1));
}

#[test]
fn fetch_serves_priority_classes_in_order() {
    let (mut rig, _) = Rig::with_project(single_spec());
    into_debug(&mut rig);
    let w = rig.worker();
    let first = rig.fetch(w).unwrap();
    assert_eq!(first.kind, MicrotaskKind::DebugFailure);
    assert_eq!(first.lease_expiry, rig.now + 600_000);
}

#[test]
fn empty_queue_gives_no_work() {
    let mut rig = Rig::new(EngineConfig::default());
    let w = rig.worker();
    assert!(rig.fetch(w).is_none());
}

#[test]
fn worker_holding_a_task_cannot_fetch_another() {
    let (mut rig, _) = Rig::with_project(todo_spec());
    let w = rig.worker();
    rig.fetch(w).unwrap();
    assert!(matches!(rig.engine.fetch_next(w, rig.now), Err(EngineError::AlreadyAssigned(_))));
}

#[test]
fn only_one_writer_per_function_in_flight() {
    let (mut rig, _) = Rig::with_project(single_spec());
    tested_pair(&mut rig);
    let implements: Vec<MicrotaskState> = rig
        .engine
        .state()
        .microtasks
        .values()
        .filter(|m| m.kind() == MicrotaskKind::ImplementBehavior)
        .map(|m| m.state)
        .collect();
    assert_eq!(implements.len(), 2);
    assert_eq!(implements.iter().filter(|s| **s == MicrotaskState::Assigned).count(), 1);
    for _ in 0..3 {
        let w = rig.worker();
        assert_ne!(rig.fetch(w).map(|a| a.kind), Some(MicrotaskKind::ImplementBehavior));
    }
}

#[test]
fn skips_requeue_and_flag_at_threshold() {
    let (mut rig, project) = Rig::with_project(single_spec());
    let mut flags = Vec::new();
    let mut id = None;
    for _ in 0..3 {
        let w = rig.worker();
        let a = rig.fetch(w).unwrap();
        id = Some(a.microtask_id);
        flags.push(rig.engine.skip(w, a.microtask_id, rig.now).unwrap().flagged);
    }
    assert_eq!(flags, vec![false, false, true]);
    let mt = &rig.engine.state().microtasks[&id.unwrap()];
    assert_eq!((mt.state, mt.attempt, mt.skip_count), (MicrotaskState::Queued, 1, 3));
    let status = rig.engine.status(project).unwrap();
    assert_eq!(status.flagged.len(), 1);

    let w = rig.worker();
    let a = rig.fetch(w).unwrap();
    let stranger = rig.worker();
    assert!(matches!(rig.engine.skip(stranger, a.microtask_id, rig.now), Err(EngineError::NotAssignee)));
}

#[test]
fn expired_leases_are_reclaimed() {
    let (mut rig, _) = Rig::with_project(single_spec());
    assert!(rig.engine.reclaim_expired(rig.now).unwrap().is_empty());
    let w = rig.worker();
    let a = rig.fetch(w).unwrap();
    assert!(rig.engine.reclaim_expired(a.lease_expiry).unwrap().is_empty(), "lease still valid at its expiry");
    let reclaimed = rig.engine.reclaim_expired(a.lease_expiry + 1_000).unwrap();
    assert_eq!(reclaimed, vec![a.microtask_id]);
    let mt = &rig.engine.state().microtasks[&a.microtask_id];
    assert_eq!((mt.state, mt.attempt), (MicrotaskState::Queued, 2));
    assert!(rig.engine.state().workers[&w].assigned_microtask_id.is_none());
    let err = rig.submit(w, a.microtask_id, SubmissionBody::new_statement("late")).unwrap_err();
    assert!(matches!(err, EngineError::NotAssignee));
}

#[test]
fn self_exclusion_keeps_test_author_off_implementation() {
    let config = EngineConfig { scheduler: SchedulerConfig { self_exclusion: true, ..Default::default() }, ..Default::default() };
    let mut rig = Rig::new(config);
    rig.engine.create_project(single_spec(), rig.now).unwrap();
    let b1 = rig.identify("doubles");
    let (w, m) = rig.claim(MicrotaskKind::WriteTest, |_| true);
    rig.submit(w, m, test_body(&[(n(1), n(2))])).unwrap();
    let offered = rig.fetch(w).map(|a| a.kind);
    assert_ne!(offered, Some(MicrotaskKind::ImplementBehavior));
    let _ = b1;
}

#[test]
fn status_of_fresh_project() {
    let (rig, project) = Rig::with_project(todo_spec());
    let status = rig.engine.status(project).unwrap();
    assert_eq!(status.functions.len(), 4);
    assert!(status.functions.iter().all(|f| f.state == FunctionState::Specified));
    assert_eq!(status.queue_depths.len(), 1);
    assert_eq!(status.queue_depths[&MicrotaskKind::IdentifyBehavior], 4);
    assert!(rig.engine.status(microcrowd_core::ProjectId(99)).is_none());
}

#[test]
fn bundle_requires_completion() {
    let (mut rig, project) = Rig::with_project(single_spec());
    into_conflict(&mut rig);
    assert!(matches!(rig.engine.build_bundle(project), Err(EngineError::NotComplete)));
}
