use thiserror::Error;

/// Errors raised by the regression engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged after {} epochs (non-finite loss)", history.len())]
    Divergence { history: Vec<f64> },

    #[error("parse error in field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("unsupported dimension: d={d} is too small for p={p} (need d >= 20*p)")]
    UnsupportedDimension { d: usize, p: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
