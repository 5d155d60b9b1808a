//! What a simulated worker submits for a microtask it holds.
//!
//! An accurate worker answers from the oracle. An inaccurate one gives an
//! answer that is wrong in exactly one place. Identification is always
//! honest: a wrong statement has no oracle to be judged against.

use std::collections::BTreeMap;

use microcrowd_core::model::{Assertion, ImplementationDraft, MicrotaskKind, Table};
use microcrowd_core::view::MicrotaskView;
use microcrowd_core::{DebugOutcome, SubmissionBody, Value};
use rand::Rng;

use crate::corrupt::{perturb_down, perturb_up};
use crate::scenario::{OracleFunction, Scenario};
use crate::SimError;

fn canonical_args(args: &[Value]) -> String {
    Value::List(args.to_vec()).canonical()
}

fn oracle_for<'a>(scenario: &'a Scenario, view: &MicrotaskView) -> Result<&'a OracleFunction, SimError> {
    scenario
        .oracle_function(&view.function.name)
        .ok_or_else(|| SimError::Protocol(format!("service handed out work for unknown function {}", view.function.name)))
}

fn oracle_assertions<'a>(oracle: &'a OracleFunction, statement: &str) -> Option<&'a [Assertion]> {
    oracle.behaviors.iter().find(|b| b.statement == statement).map(|b| b.assertions.as_slice())
}

/// Bends the expected value of one assertion.
fn corrupt_test<R: Rng>(assertions: &[Assertion], rng: &mut R) -> Vec<Assertion> {
    let mut out = assertions.to_vec();
    if !out.is_empty() {
        let i = rng.gen_range(0..out.len());
        out[i].expected = perturb_up(&out[i].expected);
    }
    out
}

/// Bends one table entry.
fn corrupt_table<R: Rng>(table: &Table, rng: &mut R) -> Table {
    let mut out = table.clone();
    if out.entries.is_empty() {
        out.default = perturb_down(&out.default);
    } else {
        let i = rng.gen_range(0..out.entries.len());
        out.entries[i].value = perturb_down(&out.entries[i].value);
    }
    out
}

fn implementation<R: Rng>(scenario: &Scenario, oracle: &OracleFunction, accurate: bool, rng: &mut R) -> ImplementationDraft {
    let table = if accurate { oracle.implementation.clone() } else { corrupt_table(&oracle.implementation, rng) };
    let mut draft = ImplementationDraft::table(table);
    draft.declared_pseudo_calls = scenario.declared_by(&oracle.name);
    draft
}

/// Builds the submission body for `view`.
pub fn respond<R: Rng>(
    scenario: &Scenario,
    view: &MicrotaskView,
    accurate: bool,
    rng: &mut R,
) -> Result<SubmissionBody, SimError> {
    let oracle = oracle_for(scenario, view)?;
    let statement_of = |id| view.behaviors.iter().find(|b| b.id == id).map(|b| b.statement.as_str());

    Ok(match view.kind {
        MicrotaskKind::IdentifyBehavior => {
            let missing = oracle.behaviors.iter().find(|b| !view.behaviors.iter().any(|v| v.statement == b.statement));
            match missing {
                Some(b) => SubmissionBody::new_statement(b.statement.clone()),
                None => SubmissionBody::no_more_behaviors(),
            }
        }
        MicrotaskKind::WriteTest => {
            let focus = view.focus_behavior_id.ok_or_else(|| SimError::Protocol("WriteTest without a focus".into()))?;
            let statement = statement_of(focus).ok_or_else(|| SimError::Protocol(format!("focus {focus} not in view")))?;
            let truth = oracle_assertions(oracle, statement)
                .ok_or_else(|| SimError::Protocol(format!("statement {statement:?} is not in the oracle")))?;
            let assertions = if accurate { truth.to_vec() } else { corrupt_test(truth, rng) };
            SubmissionBody::WriteTest { assertions }
        }
        MicrotaskKind::ImplementBehavior => {
            SubmissionBody::ImplementBehavior { implementation: implementation(scenario, oracle, accurate, rng) }
        }
        MicrotaskKind::DebugFailure => {
            let report =
                view.failure_report.as_ref().ok_or_else(|| SimError::Protocol("DebugFailure without a report".into()))?;
            // A failing case whose expectation disagrees with the oracle means
            // the test is wrong, otherwise the implementation is.
            let bad_test = report.failures.iter().find(|f| {
                let disputable = view
                    .behaviors
                    .iter()
                    .any(|b| b.id == f.behavior_id && !b.revision_pending && b.test.is_some());
                disputable && oracle.implementation.lookup(&f.args).canonical() != f.expected.canonical()
            });
            let outcome = match bad_test {
                Some(f) if accurate => DebugOutcome::DisputeTest {
                    behavior_id: f.behavior_id,
                    reason: format!("expected value for {} is wrong", canonical_args(&f.args)),
                },
                _ => DebugOutcome::FixedImplementation(implementation(scenario, oracle, accurate, rng)),
            };
            SubmissionBody::DebugFailure { outcome }
        }
        MicrotaskKind::ResolveConflict => {
            let conflict =
                view.conflict.as_ref().ok_or_else(|| SimError::Protocol("ResolveConflict without a conflict".into()))?;
            let mut edited_tests = BTreeMap::new();
            for id in [conflict.first.behavior_id, conflict.second.behavior_id] {
                let Some(b) = view.behaviors.iter().find(|b| b.id == id) else { continue };
                let Some(truth) = oracle_assertions(oracle, &b.statement) else { continue };
                let current = b.test.as_ref().map(|t| t.assertions.as_slice());
                if current != Some(truth) {
                    edited_tests.insert(id, truth.to_vec());
                }
            }
            if !accurate {
                if let Some((_, assertions)) = edited_tests.iter_mut().next() {
                    *assertions = corrupt_test(assertions, rng);
                }
            }
            SubmissionBody::ResolveConflict { edited_statements: BTreeMap::new(), edited_tests }
        }
    })
}
