use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("all probability mass excluded or zero after cleaning")]
    AllMassExcluded,

    #[error("ratio of exactly 0 for {attribute}/{category}")]
    ZeroRatio { attribute: String, category: String },

    #[error(
        "raw {attribute} proportions sum to {sum:.4}, deviating from 1 by more than {max_dev}%"
    )]
    RatioSumOutOfRange {
        attribute: String,
        sum: f64,
        max_dev: f64,
    },

    #[error("divergence undefined: mass {q:.6e} at cell {cell} where reference is zero")]
    UnmatchedSupport { cell: usize, q: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver did not converge after {iterations} iterations (best objective {best:.6e})")]
    SolverNonConvergence {
        iterations: usize,
        best: f64,
        best_allocation: Vec<f64>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("replay diverged from recorded result at iteration {iteration}")]
    ReplayDivergence { iteration: usize },

    #[error("need at least {needed} samples, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed input at row {row}: {message}")]
    MalformedInput { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
