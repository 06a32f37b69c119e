use thiserror::Error;

/// Error taxonomy for the whole toolkit.
///
/// The CLI maps variants to process exit codes: `Validation` -> 2,
/// `Numerical` -> 3, `Io` and `Format` -> 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments, malformed config values, out-of-range data.
    #[error("validation: {0}")]
    Validation(String),

    /// NaN or divergence detected inside an optimization loop.
    #[error("numerical: {0}")]
    Numerical(String),

    /// A file exists but its contents do not follow the expected layout
    /// (bad magic, truncated payload, inconsistent manifest).
    #[error("format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 2,
            Error::Numerical(_) => 3,
            Error::Format(_) | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
