use thiserror::Error;

pub type Result<T> = std::result::Result<T, IflError>;

#[derive(Debug, Error)]
pub enum IflError {
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid regularizer: {0}")]
    InvalidRegularizer(String),

    #[error("every design column is zero")]
    EmptyDesign,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed break pattern: {0}")]
    MalformedPattern(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl IflError {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        IflError::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
