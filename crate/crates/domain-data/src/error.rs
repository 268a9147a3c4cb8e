use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("dataset file corrupt: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Engine(#[from] nn_engine::NnError),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn invalid_arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(DataError::InvalidArgument(msg.into()))
}
