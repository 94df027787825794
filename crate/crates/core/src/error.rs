use std::io;

use thiserror::Error;

/// Errors produced by the storage engine and its clients.
#[derive(Debug, Error)]
pub enum Error {
    #[error("block contents exceed capacity ({needed} > {capacity} bytes)")]
    Overfull { needed: usize, capacity: usize },
    #[error("authentication failed: wrong key or tampered backend file")]
    AuthFail,
    #[error("duplicate directory entry name {0:?}")]
    DupName(String),
    #[error("invalid name {0:?}")]
    InvalidName(String),
    #[error("already exists: {0}")]
    Exists(String),
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("not a directory: {0}")]
    NotADirectory(String),
    #[error("is a non-empty directory: {0}")]
    IsDirectory(String),
    #[error("filetable is full")]
    TableFull,
    #[error("bad offset or length: {0}")]
    BadOffset(String),
    /// The data exists in metadata but has not been synced yet.
    #[error("data not yet available: {0}")]
    Unavailable(String),
    #[error("flush called with nothing staged")]
    NothingStaged,
    #[error("flush interrupted after {written} of {staged} files")]
    PartialFlush { written: usize, staged: usize },
    #[error("backend is locked by another read/write client ({0})")]
    Locked(String),
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
