use thiserror::Error;

use crate::ballvolume::BallDecayEstimate;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid arguments, configuration or preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A state outside the domain of the system or metric.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: usize, message: String },

    #[error("insufficient data: {usable} usable horizons, need at least {required}")]
    InsufficientData { usable: usize, required: usize },

    /// Particle population died out; carries everything computed up to the failing level.
    #[error("level failure at level {level}: no particle survived")]
    LevelFailure {
        level: usize,
        partial: Box<BallDecayEstimate>,
    },

    #[error("scheme violation at step {step}: certified radius {radius:e} exceeds bound {bound:e}")]
    SchemeViolation { step: usize, radius: f64, bound: f64 },

    #[error("soundness error at step {step}: {message}")]
    Soundness { step: usize, message: String },

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("degenerate shrink: c*delta/diam = {ratio} must be below {limit}")]
    DegenerateShrink { ratio: f64, limit: f64 },

    #[error("verification failure: {0}")]
    Verification(String),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
