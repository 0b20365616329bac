use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("weights are not on the simplex: {0}")]
    OffSimplex(String),

    #[error("transaction costs exhaust the portfolio: cost term {cost} >= 1")]
    InfeasibleTurnover { cost: f64 },

    #[error("degenerate return variance (sample std {std} below {eps})")]
    DegenerateVariance { std: f64, eps: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("csv parse error at line {line}, column {column}: {message}")]
    Csv {
        line: usize,
        column: String,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub(crate) fn shape(
        op: &'static str,
        expected: impl Into<String>,
        got: impl Into<String>,
    ) -> Self {
        CoreError::ShapeMismatch {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
