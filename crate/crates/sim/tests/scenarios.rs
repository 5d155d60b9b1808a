mod common;

use std::fs;
use std::path::Path;

use microcrowd_core::bundle::{Bundle, LocalService};
use microcrowd_core::model::{HttpMethod, MicrotaskKind};
use microcrowd_core::store::read_lines;
use microcrowd_core::{value, Value};
use microcrowd_service::ApiRequest;
use microcrowd_sim::runner::CLIENT_TOKEN;
use microcrowd_sim::{compare_runs, run_scenario, Comparison, Outcome, RunOptions, Scenario, SimError, SimRun, Wire};

fn small() -> Scenario {
    Scenario::builtin("todo-small").unwrap()
}

fn direct(scenario: &Scenario, seed: u64) -> SimRun {
    run_scenario(scenario, &RunOptions { wire: Wire::Direct, seed: Some(seed), ..Default::default() }).unwrap()
}

fn into_dir(scenario: &Scenario, seed: u64, wire: Wire, dir: &Path) -> SimRun {
    run_scenario(scenario, &RunOptions { wire, seed: Some(seed), out_dir: Some(dir.to_path_buf()) }).unwrap()
}

fn log_kinds(run: &SimRun) -> Vec<String> {
    run.service.with_engine(|e| e.log().events().iter().map(|ev| ev.body.kind_name().to_string()).collect())
}

#[test]
fn honest_crowd_needs_only_the_minimal_microtasks() {
    let s = small();
    let r = direct(&s, 42).report;
    assert_eq!(r.outcome, Outcome::Completed);
    assert_eq!(r.conflicts_opened, 0);
    assert_eq!(r.debug_tasks, 0);
    assert_eq!(r.total_microtasks, s.minimal_microtasks());
    assert_eq!(r.counts_by_kind[&MicrotaskKind::WriteTest], s.behavior_count() as u64);
    assert!(r.stuck.is_empty() && r.flagged.is_empty());
}

#[test]
fn accurate_crowds_converge_within_four_microtasks_per_behavior() {
    for name in ["todo-small", "todo-paper-scale"] {
        let base = Scenario::builtin(name).unwrap().with_accuracy(1.0);
        let bound = 4 * base.behavior_count() as u64;
        for skip in [0.0, 0.3, 0.9] {
            let mut s = base.clone();
            for m in &mut s.worker_models {
                m.skip_p = skip;
            }
            for seed in 1..=3 {
                let r = direct(&s, seed).report;
                assert_eq!(r.outcome, Outcome::Completed, "{name} skip {skip} seed {seed}");
                assert!(r.total_microtasks <= bound, "{name}: {} microtasks > {bound}", r.total_microtasks);
            }
        }
    }
}

#[test]
fn imperfect_crowds_still_finish() {
    let s = small().with_accuracy(0.8);
    for seed in 21..=25 {
        let r = direct(&s, seed).report;
        assert_eq!(r.outcome, Outcome::Completed, "seed {seed}");
        assert!(r.debug_tasks + r.conflicts_opened > 0);
        assert!(r.total_microtasks > s.minimal_microtasks());
    }
}

#[test]
fn a_crowd_that_is_always_wrong_hits_the_step_limit() {
    let s = small().with_accuracy(0.0);
    let r = direct(&s, 1).report;
    assert_eq!(r.outcome, Outcome::StepLimit);
    assert!(!r.stuck.is_empty());
    assert_eq!(r.wall_steps, s.effective_max_steps());
    assert!(r.bundle_hash.is_none());
}

#[test]
fn invalid_scenarios_are_rejected_before_running() {
    let mut s = small();
    s.worker_models[0].accuracy_p = 1.5;
    assert!(matches!(run_scenario(&s, &RunOptions::default()), Err(SimError::InvalidScenario(_))));

    let mut s = small();
    s.oracle.pop();
    assert!(matches!(run_scenario(&s, &RunOptions::default()), Err(SimError::InvalidScenario(_))));

    assert!(matches!(Scenario::load("no-such-scenario"), Err(SimError::InvalidScenario(_) | SimError::Io(_))));
    assert!(Scenario::parse("{").is_err());
}

#[test]
fn http_and_direct_wires_write_the_same_log() {
    let tmp = tempfile::tempdir().unwrap();
    let s = small().with_accuracy(0.8);
    into_dir(&s, 5, Wire::Http, &tmp.path().join("http"));
    into_dir(&s, 5, Wire::Direct, &tmp.path().join("direct"));
    let a = fs::read(tmp.path().join("http/events.log")).unwrap();
    let b = fs::read(tmp.path().join("direct/events.log")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn compare_reports_identity_and_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let s = small().with_accuracy(0.8);
    let dirs: Vec<_> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    into_dir(&s, 9, Wire::Direct, &dirs[0]);
    into_dir(&s, 9, Wire::Direct, &dirs[1]);
    into_dir(&s, 10, Wire::Direct, &dirs[2]);
    let log = |i: usize| dirs[i].join("events.log");
    assert_eq!(compare_runs(&log(0), &log(1)).unwrap(), Comparison::Identical);
    match compare_runs(&log(0), &log(2)).unwrap() {
        Comparison::Diverges { seq } => assert!(seq >= 1),
        Comparison::Identical => panic!("different seeds gave the same log"),
    }

    // truncate at the first commit boundary past line 30
    let text = fs::read_to_string(log(1)).unwrap();
    let cut = text.lines().skip(29).position(|l| l.contains("\"txEnd\":true")).unwrap() + 30;
    let kept: String = text.lines().take(cut).map(|l| format!("{l}\n")).collect();
    fs::write(log(1), kept).unwrap();
    assert_eq!(compare_runs(&log(0), &log(1)).unwrap(), Comparison::Diverges { seq: cut as u64 + 1 });

    // a torn commit is corruption, not a shorter log
    let torn = text.lines().position(|l| l.contains("\"txEnd\":false")).unwrap();
    let kept: String = text.lines().take(torn + 1).map(|l| format!("{l}\n")).collect();
    fs::write(log(1), kept).unwrap();
    assert!(matches!(compare_runs(&log(0), &log(1)), Err(SimError::CorruptLog(_))));

    // break a checksum
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let (body, _) = lines[4].rsplit_once('#').unwrap();
    lines[4] = format!("{body}#00000000");
    fs::write(log(2), lines.join("\n") + "\n").unwrap();
    assert!(matches!(compare_runs(&log(0), &log(2)), Err(SimError::CorruptLog(_))));
}

#[test]
fn project_completes_once_after_its_last_function() {
    let run = direct(&small().with_accuracy(0.8), 3);
    assert_eq!(run.report.outcome, Outcome::Completed);
    let kinds = log_kinds(&run);
    let done: Vec<usize> = kinds.iter().enumerate().filter(|(_, k)| *k == "ProjectCompleted").map(|(i, _)| i).collect();
    assert_eq!(done.len(), 1);
    let functions: Vec<usize> = kinds.iter().enumerate().filter(|(_, k)| *k == "FunctionCompleted").map(|(i, _)| i).collect();
    assert_eq!(functions.len(), small().oracle.len());
    assert!(functions.iter().all(|&i| i < done[0]));
}

#[test]
fn status_queue_depths_match_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    for (seed, max_steps) in [(1, Some(25)), (2, Some(60)), (3, None)] {
        let mut s = small().with_accuracy(0.8);
        s.max_steps = max_steps;
        let dir = tmp.path().join(seed.to_string());
        let run = into_dir(&s, seed, Wire::Direct, &dir);
        let reply = run.service.route(&ApiRequest::new(
            "GET",
            &format!("/projects/{}/status", run.project_id),
            Some(CLIENT_TOKEN),
            "",
        ));
        assert!(reply.is_success());
        let status: serde_json::Value = serde_json::from_str(&reply.body).unwrap();
        let events = common::parse_log(&read_lines(&dir.join("events.log")).unwrap());
        let depths = common::scan_queue_depths(&events, &run.project_id.to_string());
        assert_eq!(status["queueDepths"], serde_json::to_value(&depths).unwrap(), "seed {seed}");
        if max_steps.is_some() {
            assert!(!depths.is_empty(), "a cut-short run leaves work queued");
        }
    }
}

#[test]
fn shipped_bundle_serves_the_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let s = small();
    let run = into_dir(&s, 42, Wire::Http, tmp.path());
    for f in ["events.log", "report.json", "bundle.json"] {
        assert!(tmp.path().join(f).is_file(), "{f} missing");
    }
    let bundle = Bundle::load(&fs::read_to_string(tmp.path().join("bundle.json")).unwrap()).unwrap();
    assert_eq!(Some(bundle.manifest.content_hash.clone()), run.report.bundle_hash);
    let local = LocalService::new(bundle).unwrap();
    let todos = local.call(HttpMethod::Get, "/todos", &Value::Null).unwrap();
    let oracle = s.oracle_function("listTodos").unwrap();
    assert_eq!(todos.canonical(), oracle.implementation.default.canonical());
    let (passed, total) = local.self_check();
    assert!(total > 0);
    assert_eq!(passed, total);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["outcome"], "Completed");
    assert_eq!(report["totalMicrotasks"], s.minimal_microtasks());
}

#[test]
fn the_report_matches_the_service_metrics() {
    let run = direct(&small().with_accuracy(0.8), 11);
    let r = &run.report;
    let m = &r.metrics_from_service;
    assert_eq!(m.conflicts_opened, r.conflicts_opened);
    assert_eq!(m.tests_written, r.tests_written);
    assert_eq!(m.functions_implemented, r.functions);
    assert_eq!(value::to_canonical(m), value::to_canonical(&run.service.with_engine(|e| e.metrics(run.project_id))));
}
