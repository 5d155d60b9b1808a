//! Deterministic crowd simulator for the microcrowd service.
//!
//! A scenario carries a project spec, ground-truth behaviors, tests and
//! table implementations for every function, and a crowd description.
//! Simulated workers talk to a fresh service over its wire API in virtual
//! time, answer from the ground truth, and with some probability answer
//! wrong so the debug and conflict paths get exercised.

pub mod chaos;
pub mod client;
pub mod compare;
pub mod corrupt;
pub mod runner;
pub mod scenario;
pub mod worker;

use thiserror::Error;

pub use compare::{compare_lines, compare_runs, Comparison};
pub use runner::{run_scenario, Outcome, RunOptions, SimReport, SimRun, Wire};
pub use scenario::Scenario;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("service unreachable: {0}")]
    ServiceUnreachable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] microcrowd_core::EngineError),
    #[error(transparent)]
    Bundle(#[from] microcrowd_core::bundle::BundleError),
}
