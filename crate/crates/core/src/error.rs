use std::path::PathBuf;

/// Errors raised by the library.
///
/// The variants split into two families: usage errors (a caller broke a
/// precondition) and data errors (an input file or value was malformed).
/// The CLI maps the two families onto distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("focal loss needs at least one center (y == 1), found none")]
    NoCenters,

    #[error("average precision is undefined without ground truth")]
    NoGroundTruth,

    #[error("sampling produced zero points: {0}")]
    EmptySampling(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{}: malformed input at {location}: {message}", path.display())]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True when the error comes from a violated precondition rather than
    /// from malformed data.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Usage(_) | Error::Shape(_) | Error::NoCenters | Error::NoGroundTruth
        )
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(path: &std::path::Path, location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
