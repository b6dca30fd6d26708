use thiserror::Error;

/// Errors produced by the estimator, the geometry checks and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid weight function: {0}")]
    InvalidWeight(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dataset must contain at least one point")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    /// An exact combinatorial search would exceed the configured subset budget.
    #[error("exact search exceeds the subset budget of {budget}")]
    ExponentialLimit { budget: u64 },

    #[error("subspace basis is dependent or has rank >= p")]
    BadSubspace,

    #[error("need at least {required} points away from the center, got {actual}")]
    TooFewPoints { required: usize, actual: usize },

    #[error("contamination set is empty")]
    EmptyContamination,

    /// Centered data has rank < p, or n <= p(p-1).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("general-position rejection sampling failed after {attempts} attempts")]
    RejectionFailed { attempts: usize },

    #[error("scatter estimate of the uncontaminated data could not be computed: {0}")]
    GoodDataDegenerate(String),

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("no breakdown observed on the sweep grid")]
    NoBreakdownObserved,

    #[error("invalid contamination spec: {0}")]
    InvalidContamination(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
