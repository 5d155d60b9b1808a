//! Independent oracles shared by the sim test targets. Nothing here calls
//! into the engine's own metrics, status or conflict code; the log is read
//! back as plain JSON lines.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use microcrowd_core::harness::ActiveAssertion;
use microcrowd_core::model::AssertionRef;
use microcrowd_core::Contradiction;
use serde_json::{json, Value as Json};

/// Parses raw log lines, dropping the `#crc` suffix without checking it.
pub fn parse_log(lines: &[String]) -> Vec<Json> {
    lines
        .iter()
        .map(|l| {
            let (body, _crc) = l.rsplit_once('#').expect("line has a checksum suffix");
            serde_json::from_str(body).expect("line is json")
        })
        .collect()
}

fn s(v: &Json) -> String {
    v.as_str().expect("string id").to_string()
}

/// Recomputes the project's metrics from the log:
/// - only microtasks queued for the project count
/// - durations run from the latest assignment to the completing submission, floored to seconds
/// - the median is the lower-middle value, 0 when empty
/// - onboarding is first completion minus first assignment per worker
/// - passing means some suite run had every result for the behavior pass
pub fn scan_metrics(events: &[Json], project: &str) -> Json {
    let mut functions = BTreeSet::new();
    let mut microtasks: BTreeMap<String, String> = BTreeMap::new();
    let mut behaviors = BTreeSet::new();
    let mut assigned_at: BTreeMap<String, u64> = BTreeMap::new();
    let mut first_assignment: BTreeMap<String, u64> = BTreeMap::new();
    let mut first_completion: BTreeMap<String, u64> = BTreeMap::new();
    let mut durations = Vec::new();
    let mut counts: BTreeMap<String, u64> =
        ["IdentifyBehavior", "WriteTest", "ImplementBehavior", "DebugFailure", "ResolveConflict"]
            .iter()
            .map(|k| (k.to_string(), 0))
            .collect();
    let mut completed = 0u64;
    let mut tested = BTreeSet::new();
    let mut tests = BTreeSet::new();
    let mut passing = BTreeSet::new();
    let mut implemented = BTreeSet::new();
    let mut conflicts = BTreeSet::new();
    let (mut opened, mut resolved) = (0u64, 0u64);

    for e in events {
        let p = &e["payload"];
        let ts = e["timestamp"].as_u64().unwrap();
        match e["kind"].as_str().unwrap() {
            "FunctionSpecAdded" if p["function"]["projectId"] == project => {
                functions.insert(s(&p["function"]["id"]));
            }
            "MicrotaskQueued" if p["microtask"]["projectId"] == project => {
                microtasks.insert(s(&p["microtask"]["id"]), s(&p["microtask"]["payload"]["kind"]));
            }
            "MicrotaskAssigned" if microtasks.contains_key(&s(&p["microtaskId"])) => {
                assigned_at.insert(s(&p["microtaskId"]), ts);
                first_assignment.entry(s(&p["workerId"])).or_insert(ts);
            }
            "SubmissionApplied" if p["outcome"] == "completed" => {
                let id = s(&p["microtaskId"]);
                let Some(kind) = microtasks.get(&id) else { continue };
                completed += 1;
                *counts.get_mut(kind).unwrap() += 1;
                if let Some(at) = assigned_at.get(&id) {
                    durations.push((ts - at) / 1000);
                }
                first_completion.entry(s(&p["workerId"])).or_insert(ts);
            }
            "BehaviorAdded" if functions.contains(&s(&p["behavior"]["functionId"])) => {
                behaviors.insert(s(&p["behavior"]["id"]));
            }
            "TestStored" if behaviors.contains(&s(&p["test"]["behaviorId"])) => {
                tested.insert(s(&p["test"]["behaviorId"]));
                tests.insert(s(&p["test"]["id"]));
            }
            "ImplementationStored" if functions.contains(&s(&p["implementation"]["functionId"])) => {
                implemented.insert(s(&p["implementation"]["functionId"]));
            }
            "SuiteRan" if functions.contains(&s(&p["report"]["functionId"])) => {
                let mut all_pass: BTreeMap<String, bool> = BTreeMap::new();
                for r in p["report"]["results"].as_array().unwrap() {
                    let ok = r["status"] == "Pass";
                    all_pass.entry(s(&r["behaviorId"])).and_modify(|v| *v &= ok).or_insert(ok);
                }
                passing.extend(all_pass.into_iter().filter(|(_, ok)| *ok).map(|(b, _)| b));
            }
            "ConflictOpened" if functions.contains(&s(&p["conflict"]["functionId"])) => {
                opened += 1;
                conflicts.insert(s(&p["conflict"]["id"]));
            }
            "ConflictResolved" if conflicts.contains(&s(&p["conflictId"])) => resolved += 1,
            _ => {}
        }
    }

    durations.sort();
    let median = if durations.is_empty() { 0 } else { durations[(durations.len() - 1) / 2] };
    let onboarding: BTreeMap<String, u64> = first_completion
        .iter()
        .filter_map(|(w, done)| first_assignment.get(w).map(|start| (w.clone(), (done - start) / 1000)))
        .collect();

    json!({
        "microtasksCompleted": completed,
        "completionSecondsMedian": median,
        "countsByKind": counts,
        "behaviorsIdentified": behaviors.len(),
        "behaviorsTested": tested.len(),
        "behaviorsPassing": passing.len(),
        "functionsImplemented": implemented.len(),
        "testsWritten": tests.len(),
        "conflictsOpened": opened,
        "conflictsResolved": resolved,
        "onboardingSeconds": onboarding,
    })
}

/// Fields of `scanned` that disagree with the service's metrics document.
pub fn metric_mismatches(scanned: &Json, served: &Json) -> Vec<String> {
    scanned
        .as_object()
        .unwrap()
        .iter()
        .filter(|(k, v)| served.get(k.as_str()) != Some(v))
        .map(|(k, v)| format!("{k}: scanned {v}, served {}", served.get(k.as_str()).unwrap_or(&Json::Null)))
        .collect()
}

/// Unassigned microtasks per kind at the end of the log, zero kinds omitted.
pub fn scan_queue_depths(events: &[Json], project: &str) -> BTreeMap<String, u64> {
    let mut queued: BTreeMap<String, (String, bool)> = BTreeMap::new();
    for e in events {
        let p = &e["payload"];
        let kind = e["kind"].as_str().unwrap();
        if kind == "MicrotaskQueued" {
            if p["microtask"]["projectId"] == project {
                queued.insert(s(&p["microtask"]["id"]), (s(&p["microtask"]["payload"]["kind"]), true));
            }
            continue;
        }
        let Some(id) = p.get("microtaskId").map(s) else { continue };
        let Some(entry) = queued.get_mut(&id) else { continue };
        entry.1 = match kind {
            "MicrotaskAssigned" => false,
            "MicrotaskSkipped" | "MicrotaskTimedOut" => true,
            "SubmissionApplied" => p["outcome"] == "requeued",
            _ => entry.1,
        };
    }
    let mut depths = BTreeMap::new();
    for (kind, waiting) in queued.values() {
        if *waiting {
            *depths.entry(kind.clone()).or_insert(0) += 1;
        }
    }
    depths
}

/// Every pair checked directly: different behaviors, equal args, unequal
/// expectations. Equality is structural, with numbers compared as floats.
pub fn brute_force_contradictions(assertions: &[ActiveAssertion]) -> Vec<Contradiction> {
    let mut out = Vec::new();
    for (i, a) in assertions.iter().enumerate() {
        for b in &assertions[i + 1..] {
            if a.behavior_id == b.behavior_id || a.args != b.args || a.expected == b.expected {
                continue;
            }
            let ra = AssertionRef { behavior_id: a.behavior_id, assertion_index: a.assertion_index };
            let rb = AssertionRef { behavior_id: b.behavior_id, assertion_index: b.assertion_index };
            let (lo, hi, rl, rh) = if ra < rb { (a, b, ra, rb) } else { (b, a, rb, ra) };
            out.push(Contradiction {
                first: rl,
                second: rh,
                args: lo.args.clone(),
                expected_first: lo.expected.clone(),
                expected_second: hi.expected.clone(),
            });
        }
    }
    out.sort_by_key(|c| (c.first, c.second));
    out
}
