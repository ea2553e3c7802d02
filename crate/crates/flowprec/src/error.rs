use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown variant: {0}")]
    UnknownVariant(String),
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("invalid config field `{field}`: {msg}")]
    InvalidConfig { field: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
