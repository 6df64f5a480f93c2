use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dynamics::Trajectory;
use crate::openloop::IterationRecord;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// Operand shapes disagree with the system or with each other.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("rollout {index} produced a non-finite cost")]
    NonFiniteRollout { index: usize },

    /// The open-loop optimizer blew up. The history up to the failure is kept
    /// for diagnosis.
    #[error("open-loop optimization diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        history: Vec<IterationRecord>,
    },

    #[error("least-squares normal matrix is singular at timestep {t}")]
    Singular { t: usize },

    #[error("R + B'PB is not positive definite at timestep {t}")]
    Synthesis { t: usize },

    /// A closed-loop run hit a non-finite state. `partial` holds the states
    /// up to (and excluding) the offending step.
    #[error("rollout truncated at step {step}: non-finite state")]
    Truncated {
        step: usize,
        partial: Box<Trajectory>,
    },

    #[error("timestep {t} out of range 0..{len}")]
    OutOfRange { t: usize, len: usize },

    #[error("the simulator cannot be reset to an arbitrary state")]
    StateResetUnsupported,
}

impl Error {
    /// True for failures caused by the numbers rather than by the inputs'
    /// shape or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::NonFiniteRollout { .. }
                | Error::Diverged { .. }
                | Error::Singular { .. }
                | Error::Synthesis { .. }
                | Error::Truncated { .. }
        )
    }
}
