//! Core of the microtask programming service: domain model, event-sourced
//! state, workflow rules, scheduling, conflict detection and bundles.

pub mod bundle;
pub mod conflict;
pub mod engine;
pub mod error;
pub mod event;
pub mod harness;
pub mod ids;
pub mod metrics;
pub mod model;
pub mod scheduler;
pub mod state;
pub mod status;
pub mod store;
pub mod submission;
pub mod transition;
pub mod value;
pub mod view;
pub mod workflow;

pub use conflict::{detect_contradictions, Contradiction};
pub use engine::{Engine, EngineConfig};
pub use error::{EngineError, ErrorClass};
pub use event::{Event, EventBody, SubmissionOutcome};
pub use harness::{Harness, HarnessConfig};
pub use ids::{BehaviorId, ConflictId, FunctionId, MicrotaskId, ProjectId, TestId, WorkerId};
pub use scheduler::{Assignment, SchedulerConfig, SkipResult};
pub use state::State;
pub use store::{EventLog, FsyncPolicy, Snapshot, StoreError};
pub use submission::{DebugOutcome, Submission, SubmissionBody};
pub use value::Value;
pub use workflow::SubmitResult;
