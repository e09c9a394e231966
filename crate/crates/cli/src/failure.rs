//! Command failures and their process exit codes.

use glacier_cgan::Error;
use thiserror::Error as ThisError;

/// A failed command, classified for the exit-code contract.
#[derive(Debug, ThisError)]
pub enum Failure {
    /// Bad flags, bad config keys or values. Exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or inconsistent inputs; filesystem errors. Exit code 2.
    #[error("{0}")]
    Data(String),
    /// Numeric blow-ups and other failures while computing. Exit code 3.
    #[error("{0}")]
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    /// For errors raised while checking parameters.
    pub fn usage(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownVariant(_) => Failure::Usage(e.to_string()),
            Error::NonFinite(_) => Failure::Runtime(e.to_string()),
            Error::Shape { .. }
            | Error::InvalidArgument(_)
            | Error::Malformed { .. }
            | Error::Truncated { .. }
            | Error::EmptyDataset
            | Error::Io { .. } => Failure::Data(e.to_string()),
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;
