use thiserror::Error;

use crate::field::VectorField;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum KornError {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("fields live on different masks")]
    MaskMismatch,

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Every restart of the quotient ascent failed its line search.
    /// The best iterate seen so far is attached.
    #[error("optimization stalled; best quotient {best_value}")]
    OptimizationStall {
        best_value: f64,
        best: Box<VectorField>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = KornError> = std::result::Result<T, E>;
