use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum CotError {
    #[error("shape mismatch: {op} got {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("degenerate vector: row norm {norm} below {min}")]
    DegenerateVector { norm: f64, min: f64 },

    #[error("capacity error: requested {requested}, available {available}")]
    Capacity { requested: usize, available: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CotError {
    /// Transport failures may be retried; everything else is final.
    pub fn is_retryable(&self) -> bool {
        matches!(self, CotError::Transport(_) | CotError::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, CotError>;
