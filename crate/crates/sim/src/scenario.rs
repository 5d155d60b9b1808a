//! Scenario files: a project spec, the ground truth the simulated crowd
//! works from, and the crowd itself.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use microcrowd_core::harness::evaluate_table;
use microcrowd_core::model::{Assertion, Field, ProjectSpec, PseudoCallDecl, ScalarType, Table};
use microcrowd_core::value;
use microcrowd_core::SchedulerConfig;
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleBehavior {
    pub statement: String,
    pub assertions: Vec<Assertion>,
}

/// Ground truth for one function: its behaviors in identification order
/// and a table implementation that satisfies all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleFunction {
    pub name: String,
    pub behaviors: Vec<OracleBehavior>,
    pub implementation: Table,
}

/// Helpers the implementer of `caller` declares as pseudo-calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PseudoCallStep {
    pub caller: String,
    pub declares: Vec<PseudoCallDecl>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latency {
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkerModel {
    pub count: usize,
    /// Chance that a submission is oracle-correct.
    pub accuracy_p: f64,
    /// Chance that a fetched microtask is skipped.
    pub skip_p: f64,
    /// Think time per microtask, uniform in milliseconds.
    pub latency_ms: Latency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Scenario {
    pub name: String,
    pub project_spec: ProjectSpec,
    pub oracle: Vec<OracleFunction>,
    #[serde(default)]
    pub pseudo_call_plan: Vec<PseudoCallStep>,
    pub worker_models: Vec<WorkerModel>,
    pub seed: u64,
    /// Assignments handed out before giving up; defaults to 50x the
    /// minimal microtask count.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
}

const TODO_SMALL: &str = include_str!("../scenarios/todo-small.json");
const TODO_PAPER_SCALE: &str = include_str!("../scenarios/todo-paper-scale.json");

/// Largest seed a JSON number carries exactly.
pub const MAX_SEED: u64 = (1 << 53) - 1;

/// Names of the scenarios compiled into the crate.
pub const BUILTIN: &[&str] = &["todo-small", "todo-paper-scale"];

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidScenario(msg.into())
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, SimError> {
        let scenario: Scenario = value::from_canonical(text).map_err(|e| invalid(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn builtin(name: &str) -> Option<Scenario> {
        let text = match name {
            "todo-small" => TODO_SMALL,
            "todo-paper-scale" => TODO_PAPER_SCALE,
            _ => return None,
        };
        Some(Scenario::parse(text).expect("shipped scenarios are valid"))
    }

    /// A shipped scenario name, or a path to a scenario file.
    pub fn load(name_or_path: &str) -> Result<Scenario, SimError> {
        if let Some(s) = Scenario::builtin(name_or_path) {
            return Ok(s);
        }
        let text = std::fs::read_to_string(Path::new(name_or_path))
            .map_err(|e| invalid(format!("cannot read {name_or_path}: {e}")))?;
        Scenario::parse(&text)
    }

    pub fn to_canonical(&self) -> String {
        value::to_canonical(self)
    }

    pub fn oracle_function(&self, name: &str) -> Option<&OracleFunction> {
        self.oracle.iter().find(|f| f.name == name)
    }

    /// Pseudo-calls declared by implementations of `caller`.
    pub fn declared_by(&self, caller: &str) -> Vec<PseudoCallDecl> {
        self.pseudo_call_plan.iter().filter(|s| s.caller == caller).flat_map(|s| s.declares.iter().cloned()).collect()
    }

    /// Parameter lists of every function the project will have.
    fn signatures(&self) -> Result<BTreeMap<String, (Vec<Field>, ScalarType)>, SimError> {
        let mut sigs = BTreeMap::new();
        for e in &self.project_spec.endpoints {
            sigs.insert(e.name.clone(), (e.request_schema.clone(), ScalarType::Object));
        }
        for decl in self.pseudo_call_plan.iter().flat_map(|s| s.declares.iter()) {
            let sig = (decl.params.clone(), decl.return_type.clone());
            match sigs.get(&decl.name) {
                Some(existing) if *existing != sig => {
                    return Err(invalid(format!("{} is declared with two signatures", decl.name)))
                }
                _ => {
                    sigs.insert(decl.name.clone(), sig);
                }
            }
        }
        Ok(sigs)
    }

    pub fn behavior_count(&self) -> usize {
        self.oracle.iter().map(|f| f.behaviors.len()).sum()
    }

    /// Microtasks an error-free, skip-free crowd needs: per function one
    /// identify per behavior plus one closing declaration per quorum
    /// member, one test and one implement per behavior.
    pub fn minimal_microtasks(&self) -> u64 {
        let quorum = self.scheduler.identify_quorum as u64;
        self.oracle.iter().map(|f| 3 * f.behaviors.len() as u64 + quorum).sum()
    }

    pub fn effective_max_steps(&self) -> u64 {
        self.max_steps.unwrap_or(50 * self.minimal_microtasks())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.project_spec.endpoints.is_empty() {
            return Err(invalid("project has no endpoints"));
        }
        let sigs = self.signatures()?;
        let callers: BTreeSet<&str> = self.pseudo_call_plan.iter().map(|s| s.caller.as_str()).collect();
        for caller in &callers {
            if !sigs.contains_key(*caller) {
                return Err(invalid(format!("pseudo-call plan names unknown caller {caller}")));
            }
        }
        for decl in self.pseudo_call_plan.iter().flat_map(|s| s.declares.iter()) {
            if let Some(bad) = decl.params.iter().map(|f| &f.ty).chain([&decl.return_type]).find(|t| !t.is_known()) {
                return Err(invalid(format!("{} uses unknown type {}", decl.name, bad.as_str())));
            }
        }

        let mut seen = BTreeSet::new();
        for f in &self.oracle {
            if !seen.insert(f.name.as_str()) {
                return Err(invalid(format!("oracle lists {} twice", f.name)));
            }
            let Some((params, _)) = sigs.get(&f.name) else {
                return Err(invalid(format!("oracle function {} is neither an endpoint nor a declared helper", f.name)));
            };
            if f.behaviors.is_empty() {
                return Err(invalid(format!("{} has no behaviors", f.name)));
            }
            let mut statements = BTreeSet::new();
            for b in &f.behaviors {
                if b.statement.trim().is_empty() || b.statement.trim() != b.statement {
                    return Err(invalid(format!("{}: statements must be non-empty and trimmed", f.name)));
                }
                if !statements.insert(b.statement.as_str()) {
                    return Err(invalid(format!("{}: duplicate statement {:?}", f.name, b.statement)));
                }
                if b.assertions.is_empty() {
                    return Err(invalid(format!("{}: behavior {:?} has no assertions", f.name, b.statement)));
                }
                for a in &b.assertions {
                    if a.args.len() != params.len() {
                        return Err(invalid(format!("{}: assertion arity {} != {}", f.name, a.args.len(), params.len())));
                    }
                    let actual = evaluate_table(&f.implementation, &a.args);
                    if actual.canonical() != a.expected.canonical() {
                        return Err(invalid(format!(
                            "{}: oracle implementation gives {} for {}, expected {}",
                            f.name,
                            actual.canonical(),
                            microcrowd_core::Value::List(a.args.clone()).canonical(),
                            a.expected.canonical()
                        )));
                    }
                }
            }
            if f.implementation.entries.iter().any(|e| e.args.len() != params.len()) {
                return Err(invalid(format!("{}: table entry arity mismatch", f.name)));
            }
        }
        for name in sigs.keys() {
            if !seen.contains(name.as_str()) {
                return Err(invalid(format!("no oracle for function {name}")));
            }
        }

        if self.worker_models.is_empty() || self.worker_models.iter().all(|m| m.count == 0) {
            return Err(invalid("no workers"));
        }
        for m in &self.worker_models {
            if !(0.0..=1.0).contains(&m.accuracy_p) || !(0.0..=1.0).contains(&m.skip_p) {
                return Err(invalid("probabilities must lie in [0, 1]"));
            }
            if m.skip_p >= 1.0 {
                return Err(invalid("skipP of 1 means no work is ever done"));
            }
            if m.latency_ms.min > m.latency_ms.max {
                return Err(invalid("latency min exceeds max"));
            }
        }
        if self.seed > MAX_SEED {
            return Err(invalid(format!("seed must be at most {MAX_SEED}")));
        }
        if self.max_steps == Some(0) {
            return Err(invalid("maxSteps must be positive"));
        }
        let s = &self.scheduler;
        if s.lease_seconds == 0 || s.max_attempts == 0 || s.max_skips_before_flag == 0 || s.identify_quorum == 0 {
            return Err(invalid("scheduler settings must be positive"));
        }
        if s.identify_quorum > self.worker_models.iter().map(|m| m.count).sum::<usize>() {
            return Err(invalid("identify quorum exceeds the crowd size"));
        }
        Ok(())
    }

    /// Copy with every worker model's accuracy replaced.
    pub fn with_accuracy(mut self, accuracy: f64) -> Scenario {
        for m in &mut self.worker_models {
            m.accuracy_p = accuracy;
        }
        self
    }
}
