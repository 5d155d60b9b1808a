//! The fixed lifecycle relations for behaviors, microtasks and functions.
//! Every state change committed by the fold passes through here.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BehaviorState, FunctionState, MicrotaskState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Behavior,
    Microtask,
    Function,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("{entity} has no state named {state:?}")]
    UnknownState { entity: EntityKind, state: String },
    #[error("{entity} may not move from {from} to {to}")]
    Violation { entity: EntityKind, from: String, to: String },
}

/// A state enum with a fixed transition relation.
pub trait Lifecycle: Copy + Eq + fmt::Debug + 'static {
    const ENTITY: EntityKind;
    const STATES: &'static [Self];

    fn name(self) -> &'static str;
    fn allows(self, to: Self) -> bool;

    fn parse(name: &str) -> Option<Self> {
        Self::STATES.iter().copied().find(|s| s.name() == name)
    }
}

impl Lifecycle for BehaviorState {
    const ENTITY: EntityKind = EntityKind::Behavior;
    const STATES: &'static [Self] = &[
        BehaviorState::Identified,
        BehaviorState::Tested,
        BehaviorState::Passing,
        BehaviorState::Conflicted,
        BehaviorState::Retired,
    ];

    fn name(self) -> &'static str {
        match self {
            BehaviorState::Identified => "Identified",
            BehaviorState::Tested => "Tested",
            BehaviorState::Passing => "Passing",
            BehaviorState::Conflicted => "Conflicted",
            BehaviorState::Retired => "Retired",
        }
    }

    fn allows(self, to: Self) -> bool {
        use BehaviorState::*;
        matches!(
            (self, to),
            (Identified, Tested)
                | (Tested, Passing)
                // regression, or a disputed test rewritten
                | (Passing, Tested)
                | (Tested, Conflicted)
                | (Passing, Conflicted)
                | (Conflicted, Tested)
                | (Identified | Tested | Passing | Conflicted, Retired)
        )
    }
}

impl Lifecycle for MicrotaskState {
    const ENTITY: EntityKind = EntityKind::Microtask;
    const STATES: &'static [Self] = &[
        MicrotaskState::Queued,
        MicrotaskState::Assigned,
        MicrotaskState::Submitted,
        MicrotaskState::Completed,
        MicrotaskState::Skipped,
        MicrotaskState::TimedOut,
    ];

    fn name(self) -> &'static str {
        match self {
            MicrotaskState::Queued => "Queued",
            MicrotaskState::Assigned => "Assigned",
            MicrotaskState::Submitted => "Submitted",
            MicrotaskState::Completed => "Completed",
            MicrotaskState::Skipped => "Skipped",
            MicrotaskState::TimedOut => "TimedOut",
        }
    }

    fn allows(self, to: Self) -> bool {
        use MicrotaskState::*;
        matches!(
            (self, to),
            (Queued, Assigned)
                | (Assigned, Submitted)
                | (Assigned, TimedOut)
                | (TimedOut, Queued)
                | (Assigned, Skipped)
                | (Skipped, Queued)
                | (Submitted, Completed)
                | (Submitted, Queued)
        )
    }
}

impl Lifecycle for FunctionState {
    const ENTITY: EntityKind = EntityKind::Function;
    const STATES: &'static [Self] = &[FunctionState::Specified, FunctionState::InProgress, FunctionState::Complete];

    fn name(self) -> &'static str {
        match self {
            FunctionState::Specified => "Specified",
            FunctionState::InProgress => "InProgress",
            FunctionState::Complete => "Complete",
        }
    }

    fn allows(self, to: Self) -> bool {
        use FunctionState::*;
        matches!((self, to), (Specified, InProgress) | (InProgress, Complete))
    }
}

/// Typed check used by the fold.
pub fn ensure<S: Lifecycle>(from: S, to: S) -> Result<(), TransitionError> {
    if from.allows(to) {
        Ok(())
    } else {
        Err(TransitionError::Violation { entity: S::ENTITY, from: from.name().into(), to: to.name().into() })
    }
}

fn check_named<S: Lifecycle>(from: &str, to: &str) -> Result<(), TransitionError> {
    let parse = |name: &str| {
        S::parse(name).ok_or_else(|| TransitionError::UnknownState { entity: S::ENTITY, state: name.to_string() })
    };
    ensure(parse(from)?, parse(to)?)
}

/// Checks a transition given by state names.
pub fn check_transition(entity: EntityKind, from: &str, to: &str) -> Result<(), TransitionError> {
    match entity {
        EntityKind::Behavior => check_named::<BehaviorState>(from, to),
        EntityKind::Microtask => check_named::<MicrotaskState>(from, to),
        EntityKind::Function => check_named::<FunctionState>(from, to),
    }
}
