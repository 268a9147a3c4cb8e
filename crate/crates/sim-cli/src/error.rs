//! CLI error classes mapped onto the exit-status contract.

use std::fmt;

/// Exit codes: 0 success, 2 config, 3 IO, 4 divergence, 5 protocol.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Divergence(String),
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Protocol(_) => 5,
        }
    }

    fn class_of_fed(e: &fed_protocol::FedError) -> fn(String) -> CliError {
        use fed_protocol::FedError as F;
        match e {
            F::InvalidArgument(_) => CliError::Config,
            F::WrongProtocol(_) | F::UnsupportedVersion(_) | F::Corrupt(_) | F::Incomplete(_) => {
                CliError::Protocol
            }
            F::Io(_) => CliError::Io,
            F::Client { source, .. } => Self::class_of_fed(source),
            F::Engine(e) => Self::class_of_engine(e),
            F::Adapt(e) => Self::class_of_adapt(e),
            F::Data(e) => Self::class_of_data(e),
        }
    }

    fn class_of_engine(e: &nn_engine::NnError) -> fn(String) -> CliError {
        use nn_engine::NnError as N;
        match e {
            N::InvalidArgument(_) | N::InvalidState(_) => CliError::Config,
            N::Diverged { .. } => CliError::Divergence,
            N::Io(_) => CliError::Io,
            N::Corrupt(_) => CliError::Protocol,
        }
    }

    fn class_of_adapt(e: &bn_adapt::AdaptError) -> fn(String) -> CliError {
        use bn_adapt::AdaptError as A;
        match e {
            A::InvalidArgument(_) => CliError::Config,
            A::Diverged { .. } => CliError::Divergence,
            A::Engine(e) => Self::class_of_engine(e),
        }
    }

    fn class_of_data(e: &domain_data::DataError) -> fn(String) -> CliError {
        use domain_data::DataError as D;
        match e {
            D::InvalidArgument(_) => CliError::Config,
            D::Io(_) => CliError::Io,
            D::Corrupt(_) => CliError::Protocol,
            D::Engine(e) => Self::class_of_engine(e),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Divergence(m) => write!(f, "divergence: {m}"),
            CliError::Protocol(m) => write!(f, "protocol error: {m}"),
        }
    }
}

impl From<fed_protocol::FedError> for CliError {
    fn from(e: fed_protocol::FedError) -> Self {
        Self::class_of_fed(&e)(e.to_string())
    }
}

impl From<nn_engine::NnError> for CliError {
    fn from(e: nn_engine::NnError) -> Self {
        Self::class_of_engine(&e)(e.to_string())
    }
}

impl From<bn_adapt::AdaptError> for CliError {
    fn from(e: bn_adapt::AdaptError) -> Self {
        Self::class_of_adapt(&e)(e.to_string())
    }
}

impl From<domain_data::DataError> for CliError {
    fn from(e: domain_data::DataError) -> Self {
        Self::class_of_data(&e)(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
