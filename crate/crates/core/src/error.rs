use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// Malformed DFRW weight file; `entry` names the header field or tensor at fault.
    #[error("weight file error at {entry}: {reason}")]
    Format { entry: String, reason: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("job {job} failed at iteration {iteration}: {source}")]
    Job {
        job: String,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(entry: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            entry: entry.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the CLI: 1 configuration, 2 I/O, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. } | Error::Image { .. } | Error::Format { .. } => 2,
            Error::Numeric(_) | Error::Internal(_) => 3,
            Error::Job { source, .. } => source.exit_code(),
        }
    }
}
