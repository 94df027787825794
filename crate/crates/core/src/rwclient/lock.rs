use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const LOCK_FILE: &str = "rw.lock";

/// Fail-fast guard against a second read/write client on one backend
/// directory. Removed on drop.
#[derive(Debug)]
pub struct LockFile {
    path: PathBuf,
}

impl LockFile {
    pub fn acquire(backend_dir: &Path) -> Result<Self> {
        let path = backend_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(LockFile { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Locked(path.display().to_string())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_writer_is_refused_until_release() {
        let dir = tempfile::tempdir().unwrap();
        let first = LockFile::acquire(dir.path()).unwrap();
        assert!(matches!(LockFile::acquire(dir.path()), Err(Error::Locked(_))));
        drop(first);
        LockFile::acquire(dir.path()).unwrap();
    }
}
