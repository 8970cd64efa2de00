use thiserror::Error;

#[derive(Debug, Error)]
pub enum QcqpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite data in {0}")]
    NonFinite(String),
    #[error("{location} is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { location: String, min_eigenvalue: f64 },
    #[error("invalid bounds for variable {index}")]
    InvalidBounds { index: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
