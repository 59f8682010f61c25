use thiserror::Error;

use crate::domain::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("structure error: {0}")]
    Structure(String),

    /// No BASIC slot in which `node` transmits exists after `after_us`
    /// within the searched horizon.
    #[error("no transmit opportunity for {node} after t={after_us}us")]
    NoOpportunity { node: NodeId, after_us: u64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    /// Internal consistency check failed while executing a simulation.
    #[error("runtime assertion: {0}")]
    Assertion(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
