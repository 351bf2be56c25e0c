use thiserror::Error;

pub type Result<T> = std::result::Result<T, IdmlError>;

#[derive(Debug, Error)]
pub enum IdmlError {
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("mining exhausted: {0}")]
    MiningExhausted(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: u64, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl IdmlError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        IdmlError::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        IdmlError::Param(msg.into())
    }

    pub(crate) fn format(line: u64, msg: impl Into<String>) -> Self {
        IdmlError::Format {
            line,
            msg: msg.into(),
        }
    }
}

pub(crate) fn ensure_same_dim(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(IdmlError::shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}
