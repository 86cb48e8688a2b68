use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotor has a non-finite or zero-norm quaternion")]
    InvalidRotor,

    #[error("spherical harmonic degree {0} exceeds the supported maximum of 3")]
    ShDegree(usize),

    #[error("spherical harmonic order m={m} is outside -{l}..={l}")]
    ShOrder { l: usize, m: i32 },

    #[error("temporal index {n} exceeds temporal order {order}")]
    TemporalIndex { n: usize, order: usize },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient for gaussian {index}")]
    NonFiniteGradient { index: usize },

    #[error("non-finite parameter update for gaussian {index}")]
    NonFiniteUpdate { index: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("{}: {msg}", path.display())]
    File { path: PathBuf, msg: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::File {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,

    #[error("checkpoint version {found_major}.{found_minor} is newer than supported major version {supported_major}")]
    UnsupportedVersion {
        found_major: u16,
        found_minor: u16,
        supported_major: u16,
    },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("checkpoint malformed: {0}")]
    Malformed(String),
}
