//! Contradiction detection between tests of one function.
//!
//! Two assertions contradict when they belong to different behaviors, share
//! canonically equal args and expect canonically different values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::harness::ActiveAssertion;
use crate::model::{AssertionRef, Conflict};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Contradiction {
    /// The lower (behavior, index) of the pair.
    pub first: AssertionRef,
    pub second: AssertionRef,
    pub args: Vec<Value>,
    pub expected_first: Value,
    pub expected_second: Value,
}

impl Contradiction {
    /// True when `conflict` records exactly this contradiction.
    pub fn matches(&self, conflict: &Conflict) -> bool {
        self.first == conflict.first
            && self.second == conflict.second
            && Value::List(self.args.clone()).canonical() == Value::List(conflict.args.clone()).canonical()
            && self.expected_first.canonical() == conflict.expected_first.canonical()
            && self.expected_second.canonical() == conflict.expected_second.canonical()
    }
}

fn assertion_ref(a: &ActiveAssertion) -> AssertionRef {
    AssertionRef { behavior_id: a.behavior_id, assertion_index: a.assertion_index }
}

/// All contradicting pairs, sorted by (first, second).
pub fn detect_contradictions(assertions: &[ActiveAssertion]) -> Vec<Contradiction> {
    let mut groups: BTreeMap<String, Vec<(&ActiveAssertion, String)>> = BTreeMap::new();
    for a in assertions {
        let key = Value::List(a.args.clone()).canonical();
        groups.entry(key).or_default().push((a, a.expected.canonical()));
    }

    let mut out = Vec::new();
    for group in groups.values() {
        for (i, (a, ea)) in group.iter().enumerate() {
            for (b, eb) in &group[i + 1..] {
                if a.behavior_id == b.behavior_id || ea == eb {
                    continue;
                }
                let (lo, hi) = if (a.behavior_id, a.assertion_index) <= (b.behavior_id, b.assertion_index) {
                    (a, b)
                } else {
                    (b, a)
                };
                out.push(Contradiction {
                    first: assertion_ref(lo),
                    second: assertion_ref(hi),
                    args: lo.args.clone(),
                    expected_first: lo.expected.clone(),
                    expected_second: hi.expected.clone(),
                });
            }
        }
    }
    out.sort_by_key(|c| (c.first, c.second));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::BehaviorId;

    fn active(b: u64, i: usize, args: Vec<Value>, expected: Value) -> ActiveAssertion {
        ActiveAssertion { behavior_id: BehaviorId(b), assertion_index: i, args, expected }
    }

    #[test]
    fn same_args_different_expected_between_behaviors() {
        let found = detect_contradictions(&[
            active(1, 0, vec![Value::from(2)], Value::from(4)),
            active(2, 0, vec![Value::from(2)], Value::from(5)),
        ]);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].first.behavior_id, BehaviorId(1));
        assert_eq!(found[0].expected_second, Value::from(5));
    }

    #[test]
    fn agreement_and_same_behavior_are_not_conflicts() {
        let found = detect_contradictions(&[
            active(1, 0, vec![Value::from(2)], Value::from(4)),
            active(2, 0, vec![Value::from(2)], Value::from(4)),
            active(3, 0, vec![Value::from(7)], Value::from(1)),
            active(3, 1, vec![Value::from(7)], Value::from(2)),
        ]);
        assert!(found.is_empty());
    }

    #[test]
    fn args_compare_canonically() {
        let a = Value::parse(r#"{"b":1,"a":2}"#).unwrap();
        let b = Value::parse(r#"{ "a": 2.0, "b": 1 }"#).unwrap();
        let found = detect_contradictions(&[
            active(4, 0, vec![a], Value::Bool(true)),
            active(2, 3, vec![b], Value::Bool(false)),
        ]);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].first, AssertionRef { behavior_id: BehaviorId(2), assertion_index: 3 });
        assert_eq!(found[0].expected_first, Value::Bool(false));
    }
}
