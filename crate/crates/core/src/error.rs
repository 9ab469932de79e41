use thiserror::Error;

/// Errors raised by the library.
///
/// Variants split into two families: input validation problems and
/// numeric failures. Callers that need to map errors onto exit codes can use
/// [`Error::is_numeric`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("row:{row} col:{col} {message}")]
    Parse {
        row: usize,
        col: String,
        message: String,
    },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("complete separation in propensity model ({0}); use exact matching without a propensity caliper")]
    Separation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn parse(row: usize, col: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            row,
            col: col.into(),
            message: message.into(),
        }
    }

    /// True for failures of the computation itself rather than of the input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Separation(_) | Error::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
