use thiserror::Error;

/// Errors raised by the library. The variants map onto distinct CLI exit codes.
#[derive(Debug, Error)]
pub enum FifmError {
    /// A point, particle or configuration does not belong to the declared space.
    #[error("domain error: {0}")]
    Domain(String),
    /// A parameter is out of range or inconsistent with other parameters.
    #[error("argument error: {0}")]
    Argument(String),
    /// The requested operation is not supported for this space or size.
    #[error("capability error: {0}")]
    Capability(String),
    /// A sampling procedure exhausted its budget.
    #[error("sampling error: {0}")]
    Sampling(String),
    /// A linear system could not be solved.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Malformed input document.
    #[error("schema error: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, FifmError>;

impl From<serde_json::Error> for FifmError {
    fn from(e: serde_json::Error) -> Self {
        FifmError::Schema(e.to_string())
    }
}
