use std::fs;
use std::sync::atomic::{AtomicU64, Ordering};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;

use crate::error::{Error, Result};

/// Raw storage for the `N` backend files. Each write replaces a whole file.
pub trait PairStore: Send + Sync {
    fn file_count(&self) -> u32;
    fn read(&self, index: u32) -> Result<Vec<u8>>;
    fn write(&self, index: u32, bytes: &[u8]) -> Result<()>;
}

/// Backend files in a directory, named `00000003.blk` and so on.
pub struct DirStore {
    root: PathBuf,
    count: u32,
}

pub fn file_name(index: u32) -> String {
    format!("{index:08}.blk")
}

impl DirStore {
    /// Prepares an empty (or missing) directory to receive `count` files.
    pub fn create(root: impl AsRef<Path>, count: u32) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if root.exists() {
            if fs::read_dir(&root)?.next().is_some() {
                return Err(Error::Exists(root.display().to_string()));
            }
        } else {
            fs::create_dir_all(&root)?;
        }
        Ok(DirStore { root, count })
    }

    /// Opens an existing backend directory, counting its `.blk` files.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let mut count = 0u32;
        while root.join(file_name(count)).exists() {
            count += 1;
        }
        if count == 0 {
            return Err(Error::NotFound(format!("no backend files in {}", root.display())));
        }
        Ok(DirStore { root, count })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, index: u32) -> PathBuf {
        self.root.join(file_name(index))
    }
}

impl PairStore for DirStore {
    fn file_count(&self) -> u32 {
        self.count
    }

    fn read(&self, index: u32) -> Result<Vec<u8>> {
        if index >= self.count {
            return Err(Error::NotFound(format!("backend file {index}")));
        }
        // A reader racing a rename may briefly miss the file; retry once.
        match fs::read(self.path(index)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(fs::read(self.path(index))?),
            Err(e) => Err(e.into()),
        }
    }

    fn write(&self, index: u32, bytes: &[u8]) -> Result<()> {
        if index >= self.count {
            return Err(Error::NotFound(format!("backend file {index}")));
        }
        let tmp = self.root.join(format!(".{}.tmp", file_name(index)));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
        fs::rename(&tmp, self.path(index))?;
        Ok(())
    }
}

/// In-memory backend used by simulations and tests.
pub struct MemStore {
    files: RwLock<Vec<Vec<u8>>>,
    writes: AtomicU64,
}

impl MemStore {
    pub fn new(count: u32) -> Self {
        Self::from_snapshot(vec![Vec::new(); count as usize])
    }

    /// A store holding copies of `files`.
    pub fn from_snapshot(files: Vec<Vec<u8>>) -> Self {
        MemStore { files: RwLock::new(files), writes: AtomicU64::new(0) }
    }

    /// File writes since creation.
    pub fn write_count(&self) -> u64 {
        self.writes.load(Ordering::Relaxed)
    }

    /// Byte-for-byte copy of every file.
    pub fn snapshot(&self) -> Vec<Vec<u8>> {
        self.files.read().clone()
    }
}

impl PairStore for MemStore {
    fn file_count(&self) -> u32 {
        self.files.read().len() as u32
    }

    fn read(&self, index: u32) -> Result<Vec<u8>> {
        self.files
            .read()
            .get(index as usize)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("backend file {index}")))
    }

    fn write(&self, index: u32, bytes: &[u8]) -> Result<()> {
        let mut files = self.files.write();
        let slot = files
            .get_mut(index as usize)
            .ok_or_else(|| Error::NotFound(format!("backend file {index}")))?;
        *slot = bytes.to_vec();
        self.writes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }
}
