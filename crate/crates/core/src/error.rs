use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    /// A workload, layout or run configuration failed validation.
    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    #[error("kernel issues no memory accesses")]
    NoAccesses,

    #[error("allocation fault: {0}")]
    Allocation(String),

    #[error("address {addr:#x} out of range for a {width}-bit layout")]
    AddressOutOfRange { addr: u64, width: u32 },

    /// Engine invariant violated; always an engine bug or an inconsistent config.
    #[error("invariant violated at cycle {cycle}: {msg}")]
    Invariant { cycle: u64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub(crate) fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        SimError::Invalid {
            what,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
