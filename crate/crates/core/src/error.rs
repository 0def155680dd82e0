use thiserror::Error;

/// Errors raised by the estimation machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("probability {0} outside the open unit interval")]
    ProbabilityOutOfRange(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("design matrix is rank deficient on the weighted support (rank {rank} < {cols})")]
    RankDeficient { rank: usize, cols: usize },

    #[error("all regression weights are zero")]
    ZeroWeights,

    #[error("effective sample size {effective:.3} too small for dimension {dim}")]
    DegenerateInput { effective: f64, dim: usize },

    #[error("state {state} collapsed: effective weight {weight:.3} below {required}")]
    DegenerateState { state: usize, weight: f64, required: f64 },

    #[error("observation sequence has zero probability under the model")]
    ImpossibleSequence,

    #[error("all {starts} random starts failed; last error: {last}")]
    AllStartsFailed { starts: usize, last: String },
}

pub type Result<T> = std::result::Result<T, Error>;
