use thiserror::Error;

/// Errors raised by the numerical library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {point:?} lies outside the domain box")]
    Domain { point: Vec<f64> },

    #[error("strict convexity violated at {point:?}: det D^2 phi = {det}")]
    StrictConvexity { point: Vec<f64>, det: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("scale k={k} out of range: {reason}")]
    ScaleOutOfRange { k: i32, reason: String },

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("section normalization failed: {0}")]
    Normalization(String),

    #[error("Neumann series diverged after {terms} terms (increment norms stopped decreasing)")]
    Divergence { terms: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("inadmissible smoothness alpha={alpha}: need |alpha| < {limit} (measured eps={eps})")]
    Admissibility { alpha: f64, limit: f64, eps: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("structural mismatch: {0}")]
    Structural(String),
}

pub type Result<T> = std::result::Result<T, Error>;
