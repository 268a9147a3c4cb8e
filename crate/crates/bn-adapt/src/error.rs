use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("adaptation diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error(transparent)]
    Engine(#[from] nn_engine::NnError),
}

pub type Result<T> = std::result::Result<T, AdaptError>;

pub(crate) fn invalid_arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(AdaptError::InvalidArgument(msg.into()))
}
