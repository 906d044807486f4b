use thiserror::Error;

/// Errors produced by the auditing toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected:?}, got {actual:?}")]
    InputShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("layer {index} is not a conv2d layer")]
    UnsupportedLayer { index: usize },
    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("disjoint split requires {required} samples but only {available} exist; subsets would overlap")]
    OverlapRequired { required: usize, available: usize },
    #[error("csv parse error at row {row}, column {column}: {message}")]
    CsvParse { row: usize, column: usize, message: String },
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("too few samples: need at least {required}, got {actual}")]
    TooFewSamples { required: usize, actual: usize },
    #[error("attack dataset needs at least two examples of each label")]
    SingleClass,
    #[error("empty input: {0}")]
    Empty(String),
    #[error("undefined baseline: pre-hardening sensitivity is zero")]
    UndefinedBaseline,
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
