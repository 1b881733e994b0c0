use std::path::PathBuf;

use thiserror::Error;

use crate::llm::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no scorable records in run")]
    EmptyRun,

    #[error("format error in {source_name} at {location}: {message}")]
    Format {
        source_name: String,
        /// Offending record key or `line N`.
        location: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown sample id `{0}`")]
    Data(String),

    #[error("report has no rows")]
    EmptyReport,

    #[error("provider aborted the run: {0}")]
    ProviderAbort(#[source] ProviderError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(
        source_name: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            source_name: source_name.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
