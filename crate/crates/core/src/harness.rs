//! Runs a function's assertion suite against an implementation.
//!
//! Table implementations are evaluated in process. Source implementations
//! go to an external runner adapter: one canonical-JSON request line on the
//! child's stdin, one response line on its stdout.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{BehaviorId, FunctionId};
use crate::model::{CaseStatus, FailureEntry, FailureReport, Implementation, ImplementationBody, Table};
use crate::value::{self, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("runner unavailable: {0}")]
    RunnerUnavailable(String),
    #[error("runner protocol violation: {0}")]
    ProtocolViolation(String),
}

/// One assertion from a non-retired behavior, in suite order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveAssertion {
    pub behavior_id: BehaviorId,
    pub assertion_index: usize,
    pub args: Vec<Value>,
    pub expected: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CaseResult {
    pub behavior_id: BehaviorId,
    pub assertion_index: usize,
    pub args: Vec<Value>,
    pub expected: Value,
    pub status: CaseStatus,
    pub actual: Option<Value>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SuiteReport {
    pub function_id: FunctionId,
    pub implementation_version: u64,
    pub results: Vec<CaseResult>,
    pub duration_millis: u64,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.status == CaseStatus::Pass)
    }

    /// Behaviors with at least one assertion in the report, mapped to
    /// whether all of their assertions passed.
    pub fn behavior_outcomes(&self) -> BTreeMap<BehaviorId, bool> {
        let mut out = BTreeMap::new();
        for r in &self.results {
            let pass = out.entry(r.behavior_id).or_insert(true);
            *pass &= r.status == CaseStatus::Pass;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct HarnessConfig {
    pub case_timeout_millis: u64,
    pub suite_timeout_millis: u64,
    /// languageTag -> adapter command.
    pub adapters: BTreeMap<String, AdapterCommand>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig { case_timeout_millis: 2_000, suite_timeout_millis: 60_000, adapters: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunnerCase {
    pub case_id: String,
    pub args: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunnerRequest {
    pub language_tag: String,
    pub source: String,
    pub case_timeout_millis: u64,
    pub cases: Vec<RunnerCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RunnerStatus {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunnerResult {
    pub case_id: String,
    pub status: RunnerStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerResponse {
    pub results: Vec<RunnerResult>,
}

enum Evaluation {
    Value(Value),
    Error(String),
    Timeout,
}

#[derive(Debug, Clone, Default)]
pub struct Harness {
    config: HarnessConfig,
}

impl Harness {
    pub fn new(config: HarnessConfig) -> Self {
        Harness { config }
    }

    pub fn config(&self) -> &HarnessConfig {
        &self.config
    }

    /// Evaluates every assertion and reports in (behavior, index) order.
    pub fn run_suite(
        &self,
        implementation: &Implementation,
        assertions: &[ActiveAssertion],
    ) -> Result<SuiteReport, HarnessError> {
        let mut ordered: Vec<&ActiveAssertion> = assertions.iter().collect();
        ordered.sort_by_key(|a| (a.behavior_id, a.assertion_index));

        let started = Instant::now();
        let evaluations = match &implementation.body {
            ImplementationBody::Table { table } => {
                ordered.iter().map(|a| Evaluation::Value(table.lookup(&a.args).clone())).collect()
            }
            ImplementationBody::Source { language_tag, source } => {
                let args: Vec<Vec<Value>> = ordered.iter().map(|a| a.args.clone()).collect();
                self.run_source(language_tag, source, &args)?
            }
        };
        let duration_millis = match implementation.body {
            ImplementationBody::Table { .. } => 0,
            ImplementationBody::Source { .. } => started.elapsed().as_millis() as u64,
        };

        let results = ordered
            .into_iter()
            .zip(evaluations)
            .map(|(a, eval)| {
                let (status, actual, message) = match eval {
                    Evaluation::Value(v) => {
                        let status =
                            if v.canonical() == a.expected.canonical() { CaseStatus::Pass } else { CaseStatus::Fail };
                        (status, Some(v), None)
                    }
                    Evaluation::Error(e) => (CaseStatus::Error, None, Some(e)),
                    Evaluation::Timeout => (CaseStatus::Timeout, None, Some("case timed out".to_string())),
                };
                CaseResult {
                    behavior_id: a.behavior_id,
                    assertion_index: a.assertion_index,
                    args: a.args.clone(),
                    expected: a.expected.clone(),
                    status,
                    actual,
                    message,
                }
            })
            .collect();

        Ok(SuiteReport {
            function_id: implementation.function_id,
            implementation_version: implementation.version,
            results,
            duration_millis,
        })
    }

    fn run_source(&self, language_tag: &str, source: &str, cases: &[Vec<Value>]) -> Result<Vec<Evaluation>, HarnessError> {
        let adapter = self
            .config
            .adapters
            .get(language_tag)
            .ok_or_else(|| HarnessError::RunnerUnavailable(format!("no adapter configured for {language_tag:?}")))?;
        let request = RunnerRequest {
            language_tag: language_tag.to_string(),
            source: source.to_string(),
            case_timeout_millis: self.config.case_timeout_millis,
            cases: cases
                .iter()
                .enumerate()
                .map(|(i, args)| RunnerCase { case_id: format!("c{i}"), args: args.clone() })
                .collect(),
        };
        let budget = self
            .config
            .case_timeout_millis
            .saturating_mul(cases.len().max(1) as u64)
            .min(self.config.suite_timeout_millis);
        let Some(line) = exchange(adapter, &value::to_canonical(&request), Duration::from_millis(budget))? else {
            return Ok(cases.iter().map(|_| Evaluation::Timeout).collect());
        };
        let response: RunnerResponse = value::from_canonical(line.trim_end())
            .map_err(|e| HarnessError::ProtocolViolation(format!("malformed response: {e}")))?;
        match_results(&request, response)
    }
}

fn match_results(request: &RunnerRequest, response: RunnerResponse) -> Result<Vec<Evaluation>, HarnessError> {
    let expected: BTreeSet<&str> = request.cases.iter().map(|c| c.case_id.as_str()).collect();
    let mut by_id = BTreeMap::new();
    for result in response.results {
        if !expected.contains(result.case_id.as_str()) {
            return Err(HarnessError::ProtocolViolation(format!("unknown caseId {:?}", result.case_id)));
        }
        let case_id = result.case_id.clone();
        if by_id.insert(case_id.clone(), result).is_some() {
            return Err(HarnessError::ProtocolViolation(format!("duplicate caseId {case_id:?}")));
        }
    }
    if by_id.len() != expected.len() {
        return Err(HarnessError::ProtocolViolation(format!(
            "expected {} results, got {}",
            expected.len(),
            by_id.len()
        )));
    }
    request
        .cases
        .iter()
        .map(|case| {
            let result = by_id.remove(&case.case_id).expect("presence checked above");
            match result.status {
                RunnerStatus::Ok => result
                    .value
                    .map(Evaluation::Value)
                    .ok_or_else(|| HarnessError::ProtocolViolation(format!("case {} has no value", case.case_id))),
                RunnerStatus::Error => Ok(Evaluation::Error(result.error.unwrap_or_else(|| "error".to_string()))),
                RunnerStatus::Timeout => Ok(Evaluation::Timeout),
            }
        })
        .collect()
}

/// Sends one request line and reads one response line. `Ok(None)` means
/// the adapter exceeded `budget` and was killed.
fn exchange(adapter: &AdapterCommand, request: &str, budget: Duration) -> Result<Option<String>, HarnessError> {
    let mut child = Command::new(&adapter.program)
        .args(&adapter.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| HarnessError::RunnerUnavailable(format!("cannot start {}: {e}", adapter.program)))?;

    let mut stdin = child.stdin.take().expect("stdin is piped");
    let stdout = child.stdout.take().expect("stdout is piped");
    let payload = format!("{request}\n");
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        // A closed pipe surfaces below as a missing response line.
        let _ = stdin.write_all(payload.as_bytes());
        drop(stdin);
        let mut line = String::new();
        let read = BufReader::new(stdout).read_line(&mut line).map(|_| line);
        let _ = tx.send(read);
    });

    let line = match rx.recv_timeout(budget) {
        Ok(read) => read,
        Err(_) => {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(None);
        }
    };
    let status = child.wait().map_err(|e| HarnessError::RunnerUnavailable(e.to_string()))?;
    if !status.success() {
        return Err(HarnessError::RunnerUnavailable(format!("adapter exited with {status}")));
    }
    let line = line.map_err(|e| HarnessError::ProtocolViolation(format!("unreadable response: {e}")))?;
    if line.trim().is_empty() {
        return Err(HarnessError::ProtocolViolation("empty response".to_string()));
    }
    Ok(Some(line))
}

/// The non-passing entries of a report, or `None` when everything passed.
pub fn build_failure_report(report: &SuiteReport) -> Option<FailureReport> {
    let failures: Vec<FailureEntry> = report
        .results
        .iter()
        .filter(|r| r.status != CaseStatus::Pass)
        .map(|r| FailureEntry {
            behavior_id: r.behavior_id,
            assertion_index: r.assertion_index,
            args: r.args.clone(),
            expected: r.expected.clone(),
            status: r.status,
            actual: r.actual.clone(),
            error: r.message.clone(),
        })
        .collect();
    (!failures.is_empty()).then_some(FailureReport {
        function_id: report.function_id,
        implementation_version: report.implementation_version,
        failures,
    })
}

/// Evaluates a table directly, for callers outside a suite run.
pub fn evaluate_table(table: &Table, args: &[Value]) -> Value {
    table.lookup(args).clone()
}
