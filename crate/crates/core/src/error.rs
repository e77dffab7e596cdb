use thiserror::Error;

/// Errors raised by the numerical routines and file formats of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("operator is not an involution (max deviation of c^2 - I is {deviation:.3e})")]
    NotInvolution { deviation: f64 },

    #[error("Kraus operators violate completeness (max deviation {deviation:.3e} > {tolerance:.1e})")]
    IncompleteChannel { deviation: f64, tolerance: f64 },

    #[error("Kraus set of {count} operators exceeds the cap of {cap}; apply the channels sequentially")]
    KrausCapExceeded { count: usize, cap: usize },

    #[error("operator is not a fixed point of the channel (residual {residual:.3e} > {tolerance:.1e})")]
    NotFixedPoint { residual: f64, tolerance: f64 },

    #[error("Cesaro iteration did not converge after {iterations} steps (best residual {best_residual:.3e})")]
    NotConverged { iterations: usize, best_residual: f64 },

    #[error("decomposition failed: {check} (residual {residual:.3e})")]
    DecompositionFailed { check: String, residual: f64 },

    #[error("outcome probabilities underflowed (total {total:.3e})")]
    ProbabilityUnderflow { total: f64 },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of a numerical procedure on otherwise valid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::DecompositionFailed { .. }
                | Error::ProbabilityUnderflow { .. }
                | Error::Eigensolver(_)
        )
    }

    pub(crate) fn dims(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
