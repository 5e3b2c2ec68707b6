use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid codebook spec: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("frame construction failed: {0}")]
    FrameConstruction(String),

    #[error("encode failed: {0}")]
    Encode(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Errors caused by what the caller asked for, as opposed to failures
    /// while doing the work. The CLI maps these to exit code 1.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidDimension(_)
                | Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::InvalidInput(_)
        )
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
