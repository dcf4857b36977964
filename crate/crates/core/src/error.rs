use std::fmt;

/// Which side of a coupled rollout produced a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trajectory {
    Adaptive,
    Comparator,
}

impl fmt::Display for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trajectory::Adaptive => write!(f, "adaptive"),
            Trajectory::Comparator => write!(f, "comparator"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("{trajectory} trajectory diverged at step {step}")]
    Divergence { step: usize, trajectory: Trajectory },

    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: usize, message: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &'static str, expected: impl fmt::Display, got: impl fmt::Display) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
