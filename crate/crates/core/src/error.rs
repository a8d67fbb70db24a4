use thiserror::Error;

use crate::stream::FrameError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("format error: {0}")]
    Format(String),

    #[error("unknown fault identifier `{0}`")]
    UnknownFault(String),

    #[error(transparent)]
    Frame(#[from] FrameError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed input data or files, as opposed to
    /// bad configuration or usage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Frame(_)
                | Error::Csv(_)
                | Error::Io(_)
                | Error::Degenerate(_)
        )
    }
}
