//! Deployable bundles of completed projects, and a local server for them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::EngineError;
use crate::event::Event;
use crate::harness::{ActiveAssertion, Harness, HarnessConfig, HarnessError};
use crate::ids::{BehaviorId, ProjectId};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{
    Assertion, BehaviorState, CaseStatus, Field, HttpMethod, ImplementationBody, ProjectState, ScalarType,
};
use crate::state::State;
use crate::value::{self, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub project_id: ProjectId,
    pub created_from_seq: u64,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DescriptorEntry {
    pub method: HttpMethod,
    pub path: String,
    pub function: String,
    pub request_schema: Vec<Field>,
    pub response_schema: Vec<Field>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BundledFunction {
    pub params: Vec<Field>,
    pub return_type: ScalarType,
    pub implementation: ImplementationBody,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Bundle {
    pub manifest: Manifest,
    pub service_descriptor: Vec<DescriptorEntry>,
    pub functions: BTreeMap<String, BundledFunction>,
    pub suites: BTreeMap<String, Vec<Assertion>>,
    pub metrics_snapshot: MetricsReport,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bundle content does not match its manifest hash")]
    HashMismatch,
    #[error("no endpoint for {0}")]
    UnknownEndpoint(String),
    #[error("function {0} has no local evaluator for its implementation kind")]
    UnsupportedKind(String),
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("malformed bundle: {0}")]
    Malformed(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error(transparent)]
    Runner(#[from] HarnessError),
}

/// SHA-256 over the canonical bytes with the hash field itself removed.
fn content_hash(bundle: &Bundle) -> String {
    let mut doc = value::to_value(bundle);
    if let Value::Object(root) = &mut doc {
        if let Some(Value::Object(manifest)) = root.get_mut("manifest") {
            manifest.remove("contentHash");
        }
    }
    hex::encode(Sha256::digest(doc.canonical_bytes()))
}

impl Bundle {
    pub fn to_canonical(&self) -> String {
        value::to_canonical(self)
    }

    /// Parses a bundle and checks its hash.
    pub fn load(text: &str) -> Result<Bundle, BundleError> {
        let parsed: Bundle = value::from_canonical(text).map_err(|e| BundleError::Malformed(e.to_string()))?;
        parsed.verify()?;
        Ok(parsed)
    }

    pub fn verify(&self) -> Result<(), BundleError> {
        if content_hash(self) != self.manifest.content_hash {
            return Err(BundleError::HashMismatch);
        }
        Ok(())
    }
}

/// Assembles the bundle for a completed project from state and its log prefix.
pub fn build_bundle(state: &State, events: &[Event], project_id: ProjectId) -> Result<Bundle, EngineError> {
    let project = state.projects.get(&project_id).ok_or_else(|| EngineError::UnknownProject(project_id.to_string()))?;
    if project.state != ProjectState::Complete {
        return Err(EngineError::NotComplete);
    }

    let service_descriptor = project
        .spec
        .endpoints
        .iter()
        .map(|e| DescriptorEntry {
            method: e.method,
            path: e.path.clone(),
            function: e.name.clone(),
            request_schema: e.request_schema.clone(),
            response_schema: e.response_schema.clone(),
        })
        .collect();

    let mut functions = BTreeMap::new();
    let mut suites = BTreeMap::new();
    for id in &project.function_ids {
        let function = &state.functions[id];
        let implementation = state
            .implementations
            .get(id)
            .ok_or_else(|| EngineError::Internal(format!("complete function {} has no implementation", function.name)))?;
        functions.insert(
            function.name.clone(),
            BundledFunction {
                params: function.params.clone(),
                return_type: function.return_type.clone(),
                implementation: implementation.body.clone(),
                version: implementation.version,
            },
        );
        let assertions: Vec<Assertion> = state
            .behaviors_of(*id)
            .filter(|b| b.state == BehaviorState::Passing)
            .filter_map(|b| state.test_of(b))
            .flat_map(|t| t.assertions.iter().cloned())
            .collect();
        suites.insert(function.name.clone(), assertions);
    }

    let prefix: Vec<Event> = events.iter().filter(|e| e.seq <= state.last_seq).cloned().collect();
    let mut bundle = Bundle {
        manifest: Manifest { project_id, created_from_seq: state.last_seq, content_hash: String::new() },
        service_descriptor,
        functions,
        suites,
        metrics_snapshot: compute_metrics(project_id, &prefix),
    };
    bundle.manifest.content_hash = content_hash(&bundle);
    Ok(bundle)
}

/// Serves a verified bundle in process. Table functions are evaluated
/// directly; source functions need a runner adapter for their language.
pub struct LocalService {
    bundle: Bundle,
    harness: Option<Harness>,
}

impl LocalService {
    pub fn new(bundle: Bundle) -> Result<Self, BundleError> {
        bundle.verify()?;
        Ok(LocalService { bundle, harness: None })
    }

    pub fn with_adapters(mut self, config: HarnessConfig) -> Self {
        self.harness = Some(Harness::new(config));
        self
    }

    pub fn bundle(&self) -> &Bundle {
        &self.bundle
    }

    /// Routes an endpoint request. `args` is either a positional list or an
    /// object keyed by request field names.
    pub fn call(&self, method: HttpMethod, path: &str, args: &Value) -> Result<Value, BundleError> {
        let entry = self
            .bundle
            .service_descriptor
            .iter()
            .find(|e| e.method == method && e.path == path)
            .ok_or_else(|| BundleError::UnknownEndpoint(format!("{method} {path}")))?;
        let positional = match args {
            Value::List(items) => items.clone(),
            Value::Null => Vec::new(),
            Value::Object(fields) => entry
                .request_schema
                .iter()
                .map(|f| fields.get(&f.name).cloned().unwrap_or(Value::Null))
                .collect(),
            other => return Err(BundleError::BadArgs(format!("expected list or object, got {}", other.canonical()))),
        };
        self.invoke(&entry.function, &positional)
    }

    /// Evaluates one bundled function on positional args.
    pub fn invoke(&self, function: &str, args: &[Value]) -> Result<Value, BundleError> {
        let f = self
            .bundle
            .functions
            .get(function)
            .ok_or_else(|| BundleError::UnknownEndpoint(function.to_string()))?;
        if args.len() != f.params.len() {
            return Err(BundleError::BadArgs(format!("{function} takes {} args, got {}", f.params.len(), args.len())));
        }
        match &f.implementation {
            ImplementationBody::Table { table } => Ok(table.lookup(args).clone()),
            ImplementationBody::Source { .. } => {
                let Some(harness) = &self.harness else {
                    return Err(BundleError::UnsupportedKind(function.to_string()));
                };
                let implementation = crate::model::Implementation {
                    function_id: crate::ids::FunctionId(0),
                    body: f.implementation.clone(),
                    version: f.version,
                    declared_pseudo_calls: Vec::new(),
                    author_worker_id: crate::ids::WorkerId(0),
                };
                let probe = ActiveAssertion {
                    behavior_id: BehaviorId(0),
                    assertion_index: 0,
                    args: args.to_vec(),
                    expected: Value::Null,
                };
                let report = harness.run_suite(&implementation, &[probe])?;
                let result = &report.results[0];
                match (result.status, &result.actual) {
                    (CaseStatus::Pass | CaseStatus::Fail, Some(v)) => Ok(v.clone()),
                    _ => Err(BundleError::Evaluation(result.message.clone().unwrap_or_default())),
                }
            }
        }
    }

    /// Runs every shipped suite assertion; returns (passed, total).
    pub fn self_check(&self) -> (usize, usize) {
        let mut passed = 0;
        let mut total = 0;
        for (name, assertions) in &self.bundle.suites {
            for a in assertions {
                total += 1;
                if self.invoke(name, &a.args).is_ok_and(|v| v.canonical() == a.expected.canonical()) {
                    passed += 1;
                }
            }
        }
        (passed, total)
    }
}
