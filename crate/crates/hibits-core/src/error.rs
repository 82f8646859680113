use crate::glm::FixedEffectFit;

/// Errors produced by the fitting, prediction and data-handling layers.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    /// Cholesky factorization failed even after escalating diagonal jitter.
    #[error("covariance factorization failed after jitter up to {max_jitter:e}")]
    JitterExhausted { max_jitter: f64 },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    /// Laplace mode search ran out of iterations; `trace` holds the max
    /// successive-update magnitude per iteration.
    #[error("posterior mode search did not converge after {iterations} iterations (last step {last_step:e})")]
    ModeNonConvergence {
        iterations: usize,
        last_step: f64,
        trace: Vec<f64>,
    },

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    /// Stage 2 failed after a successful Stage 1; the fixed-effect fit is
    /// preserved so callers can still inspect it.
    #[error("stage 2 failed: {source}")]
    Stage2Failed {
        stage1: Box<FixedEffectFit>,
        #[source]
        source: Box<Error>,
    },

    #[error("load error at row {row}, column {column}: {message}")]
    Load {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
