use thiserror::Error;

/// Crate-wide error type.
///
/// Numerical routines report structured diagnostics (attempt counts, final
/// jitter, offending indices) so callers can distinguish recoverable
/// conditioning problems from contract violations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric within relative tolerance {tol:e}")]
    NonSymmetric { tol: f64 },

    #[error(
        "matrix is not positive definite after {attempts} attempts (last jitter {last_jitter:e})"
    )]
    NotPositiveDefinite { attempts: usize, last_jitter: f64 },

    #[error("iterative decomposition failed to converge: {0}")]
    ConvergenceFailure(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parameter must be positive: {0}")]
    NonPositiveParameter(String),

    #[error("empty input: {0}")]
    EmptyData(String),

    #[error("objective became non-finite at iteration {iteration} (value {value})")]
    NonFiniteObjective { iteration: usize, value: f64 },

    #[error("target density evaluated to a non-finite value at the initial state")]
    NonFiniteTarget,

    #[error("value outside the distribution's support: {0}")]
    OutOfSupport(String),

    #[error("importance density is zero at sample {index}; estimator is undefined")]
    ZeroDensityAtSample { index: usize },

    #[error("no failure sample located: {0}")]
    NoFailureFound(String),

    #[error("need at least {needed} chains, got {got}")]
    InsufficientChains { needed: usize, got: usize },

    #[error("candidate pool has {got} points, need at least {needed}")]
    InsufficientCandidates { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported file format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("corrupt model file: {0}")]
    CorruptFile(String),

    #[error("model evaluation failed: {0}")]
    ModelEvaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
