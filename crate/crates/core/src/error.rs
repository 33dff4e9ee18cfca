use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing mandatory key `{0}`")]
    MissingKey(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("latency file has {found} rows but the trace has {expected} requests")]
    LatencyCountMismatch { expected: usize, found: usize },

    #[error("address {address:#x} is outside DRAM capacity ({capacity} bytes)")]
    AddressOutOfRange { address: u64, capacity: u64 },

    #[error("energy table has no entry for ({component}, {action})")]
    MissingEnergyEntry { component: String, action: String },
}

impl SimError {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        SimError::Parse { line, msg: msg.into() }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        SimError::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
