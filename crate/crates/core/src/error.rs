use thiserror::Error;

use crate::harness::HarnessError;
use crate::model::MicrotaskKind;
use crate::state::FoldError;
use crate::store::StoreError;

/// How an error maps onto the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// The request itself is malformed or violates a schema rule.
    BadRequest,
    NotFound,
    /// Well-formed but refused by a domain rule.
    Conflict,
    Unavailable,
    Internal,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("project has no endpoints")]
    EmptyProject,
    #[error("duplicate endpoint: {0}")]
    DuplicateEndpoint(String),
    #[error("bad schema: {0}")]
    BadSchema(String),
    #[error("malformed submission: {0}")]
    MalformedBody(String),

    #[error("unknown project {0}")]
    UnknownProject(String),
    #[error("unknown function {0}")]
    UnknownFunction(String),
    #[error("unknown microtask {0}")]
    UnknownMicrotask(String),
    #[error("unknown worker {0}")]
    UnknownWorker(String),

    #[error("worker already holds {0}")]
    AlreadyAssigned(String),
    #[error("microtask is not assigned to this worker")]
    NotAssignee,
    #[error("microtask is already completed")]
    StaleMicrotask,
    #[error("submission of kind {got} for a {expected} microtask")]
    KindMismatch { expected: MicrotaskKind, got: MicrotaskKind },

    #[error("statement is empty")]
    EmptyStatement,
    #[error("behavior already exists: {0:?}")]
    DuplicateBehavior(String),
    #[error("function has no behaviors yet")]
    NoBehaviors,
    #[error("worker already declared the behavior set complete")]
    AlreadyDeclared,
    #[error("assertion has {got} args, function takes {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("test has no assertions")]
    EmptyAssertions,
    #[error("pseudo-call {name} uses unknown type {ty:?}")]
    UnknownPseudoCallType { name: String, ty: String },
    #[error("function name {0} already used with a different signature")]
    DuplicateFunctionName(String),
    #[error("no open failure report")]
    NoOpenFailure,
    #[error("behavior {0} is not part of this microtask")]
    UnknownBehavior(String),
    #[error("unknown or closed conflict {0}")]
    UnknownConflict(String),
    #[error("conflict is already ticketed")]
    AlreadyTicketed,
    #[error("edits leave the witnessed contradiction in place")]
    UnresolvedContradiction,
    #[error("project is not complete")]
    NotComplete,

    #[error("runner unavailable: {0}")]
    RunnerUnavailable(String),
    #[error("runner protocol violation: {0}")]
    ProtocolViolation(String),

    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("state fold rejected an event: {0}")]
    Fold(#[from] FoldError),
    #[error("internal: {0}")]
    Internal(String),
}

impl From<HarnessError> for EngineError {
    fn from(err: HarnessError) -> Self {
        match err {
            HarnessError::RunnerUnavailable(m) => EngineError::RunnerUnavailable(m),
            HarnessError::ProtocolViolation(m) => EngineError::ProtocolViolation(m),
        }
    }
}

impl EngineError {
    /// Machine-readable code carried in wire error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::EmptyProject => "EmptyProject",
            EngineError::DuplicateEndpoint(_) => "DuplicateEndpoint",
            EngineError::BadSchema(_) => "BadSchema",
            EngineError::MalformedBody(_) => "MalformedBody",
            EngineError::UnknownProject(_) => "UnknownProject",
            EngineError::UnknownFunction(_) => "UnknownFunction",
            EngineError::UnknownMicrotask(_) => "UnknownMicrotask",
            EngineError::UnknownWorker(_) => "UnknownWorker",
            EngineError::AlreadyAssigned(_) => "AlreadyAssigned",
            EngineError::NotAssignee => "NotAssignee",
            EngineError::StaleMicrotask => "StaleMicrotask",
            EngineError::KindMismatch { .. } => "KindMismatch",
            EngineError::EmptyStatement => "EmptyStatement",
            EngineError::DuplicateBehavior(_) => "DuplicateBehavior",
            EngineError::NoBehaviors => "NoBehaviors",
            EngineError::AlreadyDeclared => "AlreadyDeclared",
            EngineError::ArityMismatch { .. } => "ArityMismatch",
            EngineError::EmptyAssertions => "EmptyAssertions",
            EngineError::UnknownPseudoCallType { .. } => "UnknownPseudoCallType",
            EngineError::DuplicateFunctionName(_) => "DuplicateFunctionName",
            EngineError::NoOpenFailure => "NoOpenFailure",
            EngineError::UnknownBehavior(_) => "UnknownBehavior",
            EngineError::UnknownConflict(_) => "UnknownConflict",
            EngineError::AlreadyTicketed => "AlreadyTicketed",
            EngineError::UnresolvedContradiction => "UnresolvedContradiction",
            EngineError::NotComplete => "NotComplete",
            EngineError::RunnerUnavailable(_) => "RunnerUnavailable",
            EngineError::ProtocolViolation(_) => "ProtocolViolation",
            EngineError::Store(StoreError::StorageFull) => "StorageFull",
            EngineError::Store(_) => "StorageError",
            EngineError::Fold(_) => "InternalError",
            EngineError::Internal(_) => "InternalError",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            EngineError::EmptyProject
            | EngineError::DuplicateEndpoint(_)
            | EngineError::BadSchema(_)
            | EngineError::MalformedBody(_)
            | EngineError::EmptyStatement
            | EngineError::ArityMismatch { .. }
            | EngineError::EmptyAssertions
            | EngineError::UnknownPseudoCallType { .. } => ErrorClass::BadRequest,
            EngineError::UnknownProject(_)
            | EngineError::UnknownFunction(_)
            | EngineError::UnknownMicrotask(_)
            | EngineError::UnknownWorker(_) => ErrorClass::NotFound,
            EngineError::AlreadyAssigned(_)
            | EngineError::NotAssignee
            | EngineError::StaleMicrotask
            | EngineError::KindMismatch { .. }
            | EngineError::DuplicateBehavior(_)
            | EngineError::NoBehaviors
            | EngineError::AlreadyDeclared
            | EngineError::DuplicateFunctionName(_)
            | EngineError::NoOpenFailure
            | EngineError::UnknownBehavior(_)
            | EngineError::UnknownConflict(_)
            | EngineError::AlreadyTicketed
            | EngineError::UnresolvedContradiction
            | EngineError::NotComplete => ErrorClass::Conflict,
            EngineError::RunnerUnavailable(_) | EngineError::ProtocolViolation(_) => ErrorClass::Unavailable,
            EngineError::Store(StoreError::StorageFull) => ErrorClass::Unavailable,
            EngineError::Store(_) | EngineError::Fold(_) | EngineError::Internal(_) => ErrorClass::Internal,
        }
    }
}
