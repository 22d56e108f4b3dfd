use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or specification field failed validation.
    #[error("invalid `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("unknown task `{name}` (registry: {registry})")]
    UnknownTask { name: String, registry: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("cannot stratify: {0}")]
    Stratify(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    /// A precondition on the inputs of an operation does not hold.
    #[error("{0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField { field: field.into(), reason: reason.into() }
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// Short machine-readable category, used by the CLI for its error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidField { .. } => "config",
            Error::Parse { .. } | Error::UnknownTask { .. } | Error::EmptyDataset => "data",
            Error::Stratify(_) => "data",
            Error::Shape(_) | Error::Format(_) | Error::Version { .. } | Error::Truncated(_) => {
                "checkpoint"
            }
            Error::Incompatible(_) => "compatibility",
            Error::Undefined(_) | Error::Precondition(_) => "data",
            Error::Io(_) => "io",
            Error::Json(_) => "data",
        }
    }
}
