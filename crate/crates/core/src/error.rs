use thiserror::Error;

use crate::ClassId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("regularization failed after {doublings} doublings (last residual {residual:e})")]
    RegularizationFailure { doublings: usize, residual: f64 },

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("class {0} already present")]
    DuplicateClass(ClassId),

    #[error("class {0} has no samples")]
    EmptyClass(ClassId),

    #[error("covariance buffer is empty")]
    EmptyBuffer,

    #[error("adapter rank {rank} must be below min(d_out, d_in) = {max}")]
    RankTooLarge { rank: usize, max: usize },

    #[error("invalid rank {rank} for spectrum of length {len}")]
    InvalidRank { rank: usize, len: usize },

    #[error("singular values have zero total energy")]
    ZeroEnergy,

    #[error("cannot select {k} of {n} layers")]
    TooManyLayers { k: usize, n: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("label {0} has no prototype")]
    UnknownLabel(ClassId),

    #[error("invalid session spec: {0}")]
    InvalidSpec(String),

    #[error("invalid strategy `{0}`")]
    InvalidStrategy(String),

    #[error("invalid dropout rate {0}")]
    InvalidRate(f64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that originate in the numeric kernels rather than
    /// in malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalFailure(_)
                | Error::RegularizationFailure { .. }
                | Error::DegenerateCovariance(_)
                | Error::ZeroEnergy
                | Error::NonFinite { .. }
                | Error::Invariant(_)
        )
    }
}
