use std::path::PathBuf;

/// Errors raised by the forecasting library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, dimensions or parameters that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A gradient or update step produced non-finite values.
    #[error("optimization error in `{location}`: {message}")]
    Optimization { location: String, message: String },

    /// A linear-algebra routine produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Metrics could not be computed on the given sample set.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn optimization(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Optimization {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
