use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("line {line}: unknown value {value:?} for attribute {attribute:?}")]
    UnknownAttributeValue {
        line: usize,
        attribute: String,
        value: String,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("duplicate user id {0:?}")]
    DuplicateUser(String),

    #[error("user {0:?} not found")]
    UserNotFound(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(String),

    #[error("requested rank {requested} outside [1, {max}]")]
    RankTooLarge { requested: usize, max: usize },

    #[error("SVD did not converge after {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },

    #[error("zero-norm vector in cosine similarity")]
    ZeroVector,

    #[error("training diverged at epoch {epoch}: non-finite weight")]
    DivergenceDetected { epoch: usize },

    #[error("user {user:?} has {count} descriptors, needs at least {needed}")]
    TooFewDescriptors {
        user: String,
        count: usize,
        needed: usize,
    },

    #[error("need {needed} eligible users, corpus has {available}")]
    InsufficientUsers { needed: usize, available: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("invalid method/factor combination: {0}")]
    InvalidCombination(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
