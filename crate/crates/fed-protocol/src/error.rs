use thiserror::Error;

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("wrong protocol: {0}")]
    WrongProtocol(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt frame: {0}")]
    Corrupt(String),
    #[error("incomplete message: {0}")]
    Incomplete(String),
    #[error("transport error: {0}")]
    Io(#[from] std::io::Error),
    #[error("client {client} failed in round {round}: {source}")]
    Client {
        round: u32,
        client: u32,
        #[source]
        source: Box<FedError>,
    },
    #[error(transparent)]
    Engine(#[from] nn_engine::NnError),
    #[error(transparent)]
    Adapt(#[from] bn_adapt::AdaptError),
    #[error(transparent)]
    Data(#[from] domain_data::DataError),
}

pub type Result<T> = std::result::Result<T, FedError>;

pub(crate) fn invalid_arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(FedError::InvalidArgument(msg.into()))
}
