//! Error type shared by every module.

use thiserror::Error;

/// Failures raised while building or running a scenario.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {what} (channel {channel:?}, component {component:?})")]
    Numerical {
        what: String,
        channel: Option<usize>,
        component: Option<usize>,
    },

    #[error("protocol violation on channel {channel}: {reason}")]
    ProtocolViolation { channel: usize, reason: String },

    #[error("certification error: {0}")]
    Certification(String),

    #[error("schedule horizon exhausted on channel {channel} at sample {index}")]
    Horizon { channel: usize, index: usize },

    #[error("{source} (at t = {t}, after {rows} trace rows)")]
    Runtime {
        #[source]
        source: Box<Error>,
        t: f64,
        rows: usize,
    },
}

impl Error {
    /// Strips a [`Error::Runtime`] wrapper, returning the underlying cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::Runtime { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_certification(&self) -> bool {
        matches!(self.root(), Error::Certification(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
