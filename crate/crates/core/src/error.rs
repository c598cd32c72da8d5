use std::path::PathBuf;

/// Errors raised anywhere in the detector stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("bundle version {found} is newer than supported version {supported}")]
    Version { found: u32, supported: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(axis: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            axis,
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery itself (as opposed to bad
    /// inputs or files).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Training(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
