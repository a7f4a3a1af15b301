use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::storage::KillPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("metric mismatch: store uses {stored}, config requested {requested}")]
    MetricMismatch { stored: String, requested: String },

    #[error("zero vector cannot be used with the cosine metric")]
    ZeroVector,

    #[error("embedding contains a non-finite value at position {0}")]
    NonFinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("writer busy: another write transaction is open")]
    Busy,

    #[error("transaction already finished")]
    TxnFinished,

    #[error("unknown vector id {0}")]
    UnknownVector(u64),

    #[error("unknown partition {0}")]
    UnknownPartition(u32),

    #[error("no IVF index has been built")]
    NoIndex,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("type error: {0}")]
    Type(String),

    #[error("schema conflict on column `{column}`: stored {stored}, requested {requested}")]
    SchemaConflict {
        column: String,
        stored: String,
        requested: String,
    },

    #[error("predicate parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("malformed record at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },

    #[error("corrupt store {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("journal replay failed: {0}")]
    Replay(String),

    #[error("injected crash at {0:?}")]
    InjectedCrash(KillPoint),

    #[error("database handle is unusable after a crash; reopen it")]
    Crashed,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad caller input rather than storage state.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::MetricMismatch { .. }
                | Error::ZeroVector
                | Error::NonFinite(_)
                | Error::InvalidArgument(_)
                | Error::UnknownColumn(_)
                | Error::Type(_)
                | Error::SchemaConflict { .. }
                | Error::Parse { .. }
                | Error::Malformed { .. }
                | Error::UnknownVector(_)
                | Error::UnknownPartition(_)
                | Error::EmptyDataset
        )
    }
}
