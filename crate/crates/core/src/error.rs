use thiserror::Error;

use crate::trajectory::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("not applicable: {0}")]
    Inapplicable(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

/// Failure of a flow integration. Integration errors keep whatever was
/// recorded before the failure.
#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Model(#[from] Error),
    #[error("step size collapsed below {min_step:e} at t = {t}")]
    Stiff {
        min_step: f64,
        t: f64,
        partial: Box<Trajectory>,
    },
    #[error("non-finite state at step {step} (t = {t})")]
    Divergence {
        step: usize,
        t: f64,
        partial: Box<Trajectory>,
    },
}

impl FlowError {
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            FlowError::Model(_) => None,
            FlowError::Stiff { partial, .. } | FlowError::Divergence { partial, .. } => {
                Some(partial)
            }
        }
    }
}
