use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("fraction {0} outside the open interval (0, 1)")]
    BadFraction(f64),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("edge references unknown user `{0}`")]
    UnknownUser(String),
    #[error("distillation weight {0} outside [0, 1]")]
    BadLambda(f64),
    #[error("temperature must be finite and positive, got {0}")]
    BadTemperature(f64),
    #[error("validation set is empty or below the minimum of {0} samples")]
    EmptyValidation(usize),
    #[error("sub-model keys do not match ensemble weights: {0}")]
    KeyMismatch(String),
    #[error("community has no users")]
    EmptyCommunity,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infeasible target: {0}")]
    InfeasibleTarget(String),
    #[error("bundle error: {0}")]
    Bundle(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::Dimension { expected, got }
    }
}
