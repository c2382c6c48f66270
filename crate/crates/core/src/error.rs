use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad demo container magic")]
    BadMagic,

    #[error("unsupported demo container version {0}")]
    BadVersion(u32),

    #[error("demo container truncated while reading {what} (trajectory {index:?})")]
    Truncated { what: &'static str, index: Option<usize> },

    #[error("checksum mismatch in trajectory {index}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        index: usize,
        stored: u32,
        computed: u32,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("action bound for dimension {dim} is zero; supply an explicit bound")]
    ZeroActionBound { dim: usize },

    #[error("requested {requested} demonstrations but only {available} are available")]
    NotEnoughDemos { requested: usize, available: usize },

    #[error("snapshot mismatch: expected {expected}, got {found}")]
    SnapshotMismatch { expected: String, found: String },

    #[error("malformed snapshot payload")]
    BadSnapshot,

    #[error("invalid maze: {0}")]
    InvalidMaze(String),

    #[error("environment stepped before reset")]
    NotReset,

    #[error("demo generation failed: {0}")]
    DemoGeneration(String),

    #[error("dimension mismatch: expected {expected}, got {found} ({what})")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("cannot sample from an empty {0} buffer")]
    EmptyBuffer(&'static str),

    #[error("non-finite value in {0}; training diverged")]
    NonFinite(&'static str),

    #[error("index out of range: {what} {index} (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("unknown level id {0}")]
    UnknownLevel(u64),

    #[error("empty level pool")]
    EmptyPool,

    #[error("no successful demonstrations available for the reverse curriculum")]
    NoSuccessfulDemos,

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    /// Stable machine-readable code, shared with foreign-language bindings.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_) => "E_IO",
            Error::BadMagic => "E_BAD_MAGIC",
            Error::BadVersion(_) => "E_BAD_VERSION",
            Error::Truncated { .. } => "E_TRUNCATED",
            Error::Checksum { .. } => "E_CHECKSUM",
            Error::InvalidDataset(_) => "E_INVALID_DATASET",
            Error::ZeroActionBound { .. } => "E_ZERO_ACTION_BOUND",
            Error::NotEnoughDemos { .. } => "E_NOT_ENOUGH_DEMOS",
            Error::SnapshotMismatch { .. } => "E_SNAPSHOT_MISMATCH",
            Error::BadSnapshot => "E_BAD_SNAPSHOT",
            Error::InvalidMaze(_) => "E_INVALID_MAZE",
            Error::NotReset => "E_NOT_RESET",
            Error::DemoGeneration(_) => "E_DEMO_GENERATION",
            Error::DimMismatch { .. } => "E_DIM_MISMATCH",
            Error::EmptyBuffer(_) => "E_EMPTY_BUFFER",
            Error::NonFinite(_) => "E_NON_FINITE",
            Error::OutOfRange { .. } => "E_OUT_OF_RANGE",
            Error::UnknownLevel(_) => "E_UNKNOWN_LEVEL",
            Error::EmptyPool => "E_EMPTY_POOL",
            Error::NoSuccessfulDemos => "E_NO_SUCCESSFUL_DEMOS",
            Error::Config { .. } => "E_CONFIG",
            Error::Checkpoint(_) => "E_CHECKPOINT",
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
