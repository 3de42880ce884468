use thiserror::Error;

/// Errors raised by the Filippov calculus, the integrators and the stability analysis.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate sliding denominator ({value:e}) at the evaluation point")]
    DegenerateDenominator { value: f64 },

    #[error("point is off the switching manifold (|h| = {residual:e})")]
    OffManifold { residual: f64 },

    #[error("wrong point classification: expected {expected}, found {found}")]
    WrongClassification { expected: String, found: String },

    #[error("non-finite value encountered in {context}")]
    NonFiniteValue { context: String },

    #[error("event function does not change sign over the bracket")]
    NoSignChange,

    #[error("event localization exceeded {iterations} iterations")]
    MaxIterations { iterations: usize },

    #[error("degenerate event at t = {time}: {reason}")]
    DegenerateEvent { time: f64, reason: String },

    #[error("more than {limit} events detected (chattering)")]
    ChatterDetected { limit: usize },

    #[error("no discontinuity event found before t = {horizon}")]
    NoEventFound { horizon: f64 },

    #[error("periodic orbit not converged after {laps} laps (last anchor mismatch {mismatch:e})")]
    NotConverged { laps: usize, mismatch: f64 },

    #[error("adjacency matrix is not symmetric")]
    NotSymmetric,

    #[error("graph is not connected (zero Laplacian eigenvalue has multiplicity {multiplicity})")]
    NotConnected { multiplicity: usize },

    #[error("invalid adjacency: {0}")]
    InvalidAdjacency(String),

    #[error("agent {agent} lost sliding (alpha = {alpha})")]
    SlidingLost { agent: usize, alpha: f64 },

    #[error("dense problem of size {size} exceeds the guard {limit}")]
    SizeGuardExceeded { size: usize, limit: usize },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue {
            context: context.to_string(),
        })
    }
}
