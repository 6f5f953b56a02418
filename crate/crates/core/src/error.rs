use thiserror::Error;

use crate::trajectory::ModeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("rollout diverged at step {step}")]
    DivergedRollout { step: usize },

    #[error("constraint set is infeasible{}", mode.map(|m| format!(" in mode {m}")).unwrap_or_default())]
    InfeasibleConstraints { mode: Option<ModeId> },

    #[error("quadratic program Hessian is not positive definite")]
    NotPositiveDefinite,

    #[error("backward pass failed at step {step}: {reason}")]
    BackwardPass { step: usize, reason: String },

    #[error("no feasible plan: {0}")]
    NoPlan(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
