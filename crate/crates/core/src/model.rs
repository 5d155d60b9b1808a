//! Domain types: endpoints, functions, behaviors, tests, implementations,
//! microtasks, workers and conflicts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ids::{BehaviorId, ConflictId, FunctionId, MicrotaskId, ProjectId, TestId, WorkerId};
use crate::value::Value;

/// Milliseconds on the service clock.
pub type Timestamp = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Post,
    Put,
    Delete,
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HttpMethod::Get => "GET",
            HttpMethod::Post => "POST",
            HttpMethod::Put => "PUT",
            HttpMethod::Delete => "DELETE",
        })
    }
}

impl FromStr for HttpMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GET" => Ok(HttpMethod::Get),
            "POST" => Ok(HttpMethod::Post),
            "PUT" => Ok(HttpMethod::Put),
            "DELETE" => Ok(HttpMethod::Delete),
            _ => Err(format!("unsupported method {s}")),
        }
    }
}

/// Declared type of a parameter, schema field or return value.
///
/// Unknown names survive deserialization as `Other` so validation can
/// report them as domain errors instead of parse failures.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScalarType {
    String,
    Number,
    Boolean,
    List,
    Object,
    Other(String),
}

impl ScalarType {
    pub fn as_str(&self) -> &str {
        match self {
            ScalarType::String => "string",
            ScalarType::Number => "number",
            ScalarType::Boolean => "boolean",
            ScalarType::List => "list",
            ScalarType::Object => "object",
            ScalarType::Other(name) => name,
        }
    }

    pub fn is_known(&self) -> bool {
        !matches!(self, ScalarType::Other(_))
    }
}

impl From<&str> for ScalarType {
    fn from(s: &str) -> Self {
        match s {
            "string" => ScalarType::String,
            "number" => ScalarType::Number,
            "boolean" => ScalarType::Boolean,
            "list" => ScalarType::List,
            "object" => ScalarType::Object,
            other => ScalarType::Other(other.to_string()),
        }
    }
}

impl Serialize for ScalarType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ScalarType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(ScalarType::from(String::deserialize(deserializer)?.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ScalarType,
}

impl Field {
    pub fn new(name: impl Into<String>, ty: ScalarType) -> Self {
        Field { name: name.into(), ty }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndpointDescription {
    pub method: HttpMethod,
    pub path: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub request_schema: Vec<Field>,
    #[serde(default)]
    pub response_schema: Vec<Field>,
}

/// What a client submits to start a project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectSpec {
    #[serde(default)]
    pub name: String,
    pub endpoints: Vec<EndpointDescription>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectState {
    Active,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Project {
    pub id: ProjectId,
    pub spec: ProjectSpec,
    pub state: ProjectState,
    pub function_ids: Vec<FunctionId>,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum FunctionOrigin {
    EndpointRoot { endpoint: String },
    PseudoCall { spawned_by: FunctionId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FunctionState {
    Specified,
    InProgress,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FunctionSpec {
    pub id: FunctionId,
    pub project_id: ProjectId,
    pub name: String,
    pub params: Vec<Field>,
    pub return_type: ScalarType,
    pub description: String,
    pub origin: FunctionOrigin,
    pub state: FunctionState,
    pub behavior_ids: Vec<BehaviorId>,
    /// Distinct workers who declared the behavior set exhausted.
    pub no_more_declarers: BTreeSet<WorkerId>,
    /// Failures of the latest suite run, while any remain.
    pub open_failure: Option<FailureReport>,
}

impl FunctionSpec {
    pub fn no_more_declarations(&self) -> usize {
        self.no_more_declarers.len()
    }

    pub fn signature_matches(&self, params: &[Field], return_type: &ScalarType) -> bool {
        self.return_type == *return_type
            && self.params.len() == params.len()
            && self.params.iter().zip(params).all(|(a, b)| a.ty == b.ty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BehaviorState {
    Identified,
    Tested,
    Passing,
    Conflicted,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Behavior {
    pub id: BehaviorId,
    pub function_id: FunctionId,
    pub statement: String,
    pub state: BehaviorState,
    pub test_id: Option<TestId>,
    /// Set while a disputed test awaits its rewrite.
    pub revision_pending: bool,
    pub identified_by: MicrotaskId,
    pub author_worker_id: WorkerId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assertion {
    pub args: Vec<Value>,
    pub expected: Value,
}

impl Assertion {
    pub fn new(args: Vec<Value>, expected: Value) -> Self {
        Assertion { args, expected }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestArtifact {
    pub id: TestId,
    pub behavior_id: BehaviorId,
    pub assertions: Vec<Assertion>,
    pub author_worker_id: WorkerId,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PseudoCallDecl {
    pub name: String,
    pub params: Vec<Field>,
    pub return_type: ScalarType,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub args: Vec<Value>,
    pub value: Value,
}

/// Lookup-table implementation: canonical args to value, with a default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub entries: Vec<TableEntry>,
    pub default: Value,
}

impl Table {
    pub fn new(default: Value) -> Self {
        Table { entries: Vec::new(), default }
    }

    pub fn with_entry(mut self, args: Vec<Value>, value: Value) -> Self {
        self.set(args, value);
        self
    }

    /// Inserts or replaces the entry for `args`.
    pub fn set(&mut self, args: Vec<Value>, value: Value) {
        let key = Value::List(args.clone()).canonical();
        match self.entries.iter_mut().find(|e| Value::List(e.args.clone()).canonical() == key) {
            Some(entry) => entry.value = value,
            None => self.entries.push(TableEntry { args, value }),
        }
    }

    pub fn lookup(&self, args: &[Value]) -> &Value {
        self.index().get(&Value::List(args.to_vec()).canonical()).copied().unwrap_or(&self.default)
    }

    /// Map from canonical args to value; later duplicates win.
    pub fn index(&self) -> BTreeMap<String, &Value> {
        self.entries.iter().map(|e| (Value::List(e.args.clone()).canonical(), &e.value)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ImplementationBody {
    Table { table: Table },
    #[serde(rename_all = "camelCase")]
    Source { language_tag: String, source: String },
}

impl ImplementationBody {
    pub fn language_tag(&self) -> &str {
        match self {
            ImplementationBody::Table { .. } => "table",
            ImplementationBody::Source { language_tag, .. } => language_tag,
        }
    }
}

/// What a worker submits as an implementation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ImplementationDraft {
    #[serde(flatten)]
    pub body: ImplementationBody,
    #[serde(default)]
    pub declared_pseudo_calls: Vec<PseudoCallDecl>,
}

impl ImplementationDraft {
    pub fn table(table: Table) -> Self {
        ImplementationDraft { body: ImplementationBody::Table { table }, declared_pseudo_calls: Vec::new() }
    }

    pub fn with_pseudo_call(mut self, decl: PseudoCallDecl) -> Self {
        self.declared_pseudo_calls.push(decl);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Implementation {
    pub function_id: FunctionId,
    pub body: ImplementationBody,
    pub version: u64,
    pub declared_pseudo_calls: Vec<PseudoCallDecl>,
    pub author_worker_id: WorkerId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MicrotaskKind {
    IdentifyBehavior,
    WriteTest,
    ImplementBehavior,
    DebugFailure,
    ResolveConflict,
}

impl MicrotaskKind {
    pub const ALL: [MicrotaskKind; 5] = [
        MicrotaskKind::IdentifyBehavior,
        MicrotaskKind::WriteTest,
        MicrotaskKind::ImplementBehavior,
        MicrotaskKind::DebugFailure,
        MicrotaskKind::ResolveConflict,
    ];

    /// Lower rank is served first: repair work before new work.
    pub fn priority_rank(self) -> u8 {
        match self {
            MicrotaskKind::DebugFailure => 0,
            MicrotaskKind::ResolveConflict => 1,
            MicrotaskKind::ImplementBehavior => 2,
            MicrotaskKind::WriteTest => 3,
            MicrotaskKind::IdentifyBehavior => 4,
        }
    }

    /// Kinds that mutate a function's implementation.
    pub fn is_writer(self) -> bool {
        matches!(self, MicrotaskKind::ImplementBehavior | MicrotaskKind::DebugFailure)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MicrotaskKind::IdentifyBehavior => "IdentifyBehavior",
            MicrotaskKind::WriteTest => "WriteTest",
            MicrotaskKind::ImplementBehavior => "ImplementBehavior",
            MicrotaskKind::DebugFailure => "DebugFailure",
            MicrotaskKind::ResolveConflict => "ResolveConflict",
        }
    }
}

impl fmt::Display for MicrotaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all_fields = "camelCase")]
pub enum MicrotaskPayload {
    IdentifyBehavior,
    WriteTest { behavior_id: BehaviorId, revision: bool },
    ImplementBehavior { behavior_id: BehaviorId },
    DebugFailure { report: FailureReport },
    ResolveConflict { conflict_id: ConflictId },
}

impl MicrotaskPayload {
    pub fn kind(&self) -> MicrotaskKind {
        match self {
            MicrotaskPayload::IdentifyBehavior => MicrotaskKind::IdentifyBehavior,
            MicrotaskPayload::WriteTest { .. } => MicrotaskKind::WriteTest,
            MicrotaskPayload::ImplementBehavior { .. } => MicrotaskKind::ImplementBehavior,
            MicrotaskPayload::DebugFailure { .. } => MicrotaskKind::DebugFailure,
            MicrotaskPayload::ResolveConflict { .. } => MicrotaskKind::ResolveConflict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MicrotaskState {
    Queued,
    Assigned,
    Submitted,
    Completed,
    Skipped,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Microtask {
    pub id: MicrotaskId,
    pub project_id: ProjectId,
    pub function_id: FunctionId,
    pub payload: MicrotaskPayload,
    pub state: MicrotaskState,
    pub assigned_worker_id: Option<WorkerId>,
    pub lease_expiry: Option<Timestamp>,
    pub attempt: u32,
    pub skip_count: u32,
    pub created_at: Timestamp,
    pub assigned_at: Option<Timestamp>,
    pub completed_at: Option<Timestamp>,
}

impl Microtask {
    pub fn kind(&self) -> MicrotaskKind {
        self.payload.kind()
    }

    pub fn is_terminal(&self) -> bool {
        self.state == MicrotaskState::Completed
    }

    pub fn in_flight(&self) -> bool {
        matches!(self.state, MicrotaskState::Assigned | MicrotaskState::Submitted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Worker {
    pub id: WorkerId,
    pub handle: String,
    pub assigned_microtask_id: Option<MicrotaskId>,
    pub completed_count: u64,
    pub skip_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssertionRef {
    pub behavior_id: BehaviorId,
    pub assertion_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConflictState {
    Open,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Conflict {
    pub id: ConflictId,
    pub function_id: FunctionId,
    pub first: AssertionRef,
    pub second: AssertionRef,
    pub args: Vec<Value>,
    pub expected_first: Value,
    pub expected_second: Value,
    pub state: ConflictState,
    /// The ResolveConflict microtask working on this conflict, once queued.
    pub ticket: Option<MicrotaskId>,
}

impl Conflict {
    pub fn involves(&self, behavior: BehaviorId) -> bool {
        self.first.behavior_id == behavior || self.second.behavior_id == behavior
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseStatus {
    Pass,
    Fail,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FailureEntry {
    pub behavior_id: BehaviorId,
    pub assertion_index: usize,
    pub args: Vec<Value>,
    pub expected: Value,
    pub status: CaseStatus,
    pub actual: Option<Value>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FailureReport {
    pub function_id: FunctionId,
    pub implementation_version: u64,
    pub failures: Vec<FailureEntry>,
}
