use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} contains a non-finite entry")]
    NonFinite { what: &'static str },

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("{what} has a negative entry; nonnegative input required")]
    NegativeEntries { what: &'static str },

    #[error("{what} is not symmetric (max deviation {max_dev:e})")]
    Asymmetric { what: &'static str, max_dev: f64 },

    #[error("sample {index} has zero norm")]
    ZeroNormColumn { index: usize },

    #[error("linear system is numerically singular: {0}")]
    Singular(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
