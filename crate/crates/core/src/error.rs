use thiserror::Error;

/// Errors raised by the estimation and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-supplied argument is invalid.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Configuration failed validation; `field` is the dotted path of the offending key.
    #[error("invalid configuration field `{field}`: {reason}")]
    Validation { field: String, reason: String },

    /// Shapes of the supplied arrays do not agree.
    #[error("dimension mismatch: {0}")]
    Shape(String),

    /// Matrix is numerically degenerate (singular, not PSD, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Rank requested exceeds what the data supports.
    #[error("rank error: {0}")]
    Rank(String),

    /// Malformed or missing input file.
    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Argument(_)
                | Error::Validation { .. }
                | Error::Shape(_)
                | Error::Input(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
