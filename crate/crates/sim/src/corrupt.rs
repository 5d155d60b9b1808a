//! Minimal perturbations used to inject wrong submissions.
//!
//! Tests are bent one way and implementations the other, so a corrupted
//! test can never be satisfied by a corrupted implementation of the same
//! case. Every wrong answer has to be caught by a failing suite or a
//! contradiction.

use microcrowd_core::Value;

/// Perturbation applied to expected values in tests.
pub fn perturb_up(v: &Value) -> Value {
    match v {
        // past 2^53 adding one is a no-op
        Value::Number(n) if n + 1.0 == *n => Value::Number(-n),
        Value::Number(n) => Value::Number(n + 1.0),
        Value::String(s) => Value::String(format!("{s}x")),
        Value::Bool(b) => Value::Bool(!b),
        Value::Null => Value::int(0),
        Value::List(items) => match items.split_last() {
            Some((last, rest)) => {
                let mut out = rest.to_vec();
                out.push(perturb_up(last));
                Value::List(out)
            }
            None => Value::List(vec![Value::int(0)]),
        },
        Value::Object(map) => {
            let mut out = map.clone();
            match map.iter().next() {
                Some((k, first)) => {
                    out.insert(k.clone(), perturb_up(first));
                }
                None => {
                    out.insert("x".into(), Value::int(0));
                }
            }
            Value::Object(out)
        }
    }
}

/// Perturbation applied to implementation table values.
pub fn perturb_down(v: &Value) -> Value {
    match v {
        Value::Number(n) if n - 1.0 == *n => Value::Number(n / 2.0),
        Value::Number(n) => Value::Number(n - 1.0),
        Value::String(s) => {
            let mut t = s.clone();
            if t.pop().is_none() {
                t.push('y');
            }
            Value::String(t)
        }
        Value::Bool(_) => Value::Null,
        Value::Null => Value::str(""),
        Value::List(items) => match items.split_last() {
            Some((last, rest)) => {
                let mut out = rest.to_vec();
                out.push(perturb_down(last));
                Value::List(out)
            }
            None => Value::List(vec![Value::Null]),
        },
        Value::Object(map) => {
            let mut out = map.clone();
            match map.iter().next() {
                Some((k, first)) => {
                    out.insert(k.clone(), perturb_down(first));
                }
                None => {
                    out.insert("y".into(), Value::int(0));
                }
            }
            Value::Object(out)
        }
    }
}
