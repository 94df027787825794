//! Read-only client. It sees only what the last flushed superblock
//! publishes and never writes to the backend.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::backend::{BackendReader, PairStore};
use crate::codec::{decode_directory, Cipher, DirEntry, FileEntry, Geometry, Superblock};
use crate::error::{Error, Result};
use crate::fstable::{extract_fragment, extract_leaf, lookup_published, resolve_path};
use crate::rwclient::read_range;

pub struct RoClient {
    reader: Arc<BackendReader>,
    geo: Geometry,
    /// Seconds a fetched superblock may be reused.
    ttl: f64,
    cached: Option<(Superblock, f64)>,
}

impl RoClient {
    pub fn mount(store: Arc<dyn PairStore>, cipher: Arc<Cipher>) -> Result<Self> {
        Self::from_reader(Arc::new(BackendReader::new(store, cipher)))
    }

    pub fn from_reader(reader: Arc<BackendReader>) -> Result<Self> {
        let sb = reader.read_superblock()?;
        let geo = sb.params.geometry()?;
        let ttl = sb.params.drip_time_ms as f64 / 2000.0;
        Ok(RoClient { reader, geo, ttl, cached: None })
    }

    pub fn with_ttl(mut self, ttl: f64) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn reader(&self) -> &Arc<BackendReader> {
        &self.reader
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geo
    }

    /// The published view at `now`, refetched once the cached copy is older
    /// than the TTL.
    pub fn view(&mut self, now: f64) -> Result<Superblock> {
        match &self.cached {
            Some((sb, at)) if now - at < self.ttl && now >= *at => Ok(sb.clone()),
            _ => {
                let sb = self.reader.read_superblock()?;
                self.cached = Some((sb.clone(), now));
                Ok(sb)
            }
        }
    }

    pub fn invalidate(&mut self) {
        self.cached = None;
    }

    pub fn read(&mut self, path: &str, offset: u64, length: u64, now: f64) -> Result<Vec<u8>> {
        let sb = self.view(now)?;
        let entry = self.resolve_entry(&sb, path)?;
        read_range(&self.geo, &entry, offset, length, |i| self.fragment(&entry, i))
    }

    pub fn read_all(&mut self, path: &str, now: f64) -> Result<Vec<u8>> {
        let sb = self.view(now)?;
        let entry = self.resolve_entry(&sb, path)?;
        read_range(&self.geo, &entry, 0, entry.size, |i| self.fragment(&entry, i))
    }

    pub fn list(&mut self, path: &str, now: f64) -> Result<Vec<DirEntry>> {
        let sb = self.view(now)?;
        let id = self.resolve_id(&sb, path)?;
        self.read_dir(&sb, id)
    }

    pub fn stat(&mut self, path: &str, now: f64) -> Result<FileEntry> {
        let sb = self.view(now)?;
        self.resolve_entry(&sb, path)
    }

    /// Reads one fragment from scratch: a fresh superblock, at most one
    /// leaf, then the data pair. Returns the bytes and the backend files read.
    pub fn fetch_fragment(&self, file_id: u64, index: usize) -> Result<(Vec<u8>, u64)> {
        let before = self.reader.read_count();
        let sb = self.reader.read_superblock()?;
        let entry = self.entry(&sb, file_id)?;
        let data = self.fragment(&entry, index)?;
        Ok((data, self.reader.read_count() - before))
    }

    fn entry(&self, sb: &Superblock, file_id: u64) -> Result<FileEntry> {
        lookup_published(sb, file_id, |slot, id| extract_leaf(&self.reader.read_pair(&self.geo, id.pair())?, slot, id))
    }

    fn resolve_id(&self, sb: &Superblock, path: &str) -> Result<u64> {
        resolve_path(path, |id| self.read_dir(sb, id))
    }

    /// A listed name whose entry is not yet published is an IO error, not a
    /// missing file.
    fn resolve_entry(&self, sb: &Superblock, path: &str) -> Result<FileEntry> {
        let id = self.resolve_id(sb, path)?;
        self.entry(sb, id).map_err(|e| match e {
            Error::NotFound(_) => Error::Unavailable(format!("{path} is not synced yet")),
            e => e,
        })
    }

    fn read_dir(&self, sb: &Superblock, dir_id: u64) -> Result<Vec<DirEntry>> {
        let entry = self.entry(sb, dir_id)?;
        if !entry.is_directory {
            return Err(Error::NotADirectory(format!("file id {dir_id}")));
        }
        let bytes = read_range(&self.geo, &entry, 0, entry.size, |i| self.fragment(&entry, i))?;
        decode_directory(&bytes)
    }

    fn fragment(&self, entry: &FileEntry, index: usize) -> Result<Vec<u8>> {
        let id = entry.block_ids[index];
        if id.is_unallocated() {
            return Err(Error::Unavailable(format!("file {} fragment {index} not yet written", entry.file_id)));
        }
        let len = self.geo.fragment_len(entry.size, index);
        let pair = self.reader.read_pair(&self.geo, id.pair())?;
        extract_fragment(&self.geo, &pair, entry.file_id, index as u64, id, len)
            .ok_or_else(|| Error::Unavailable(format!("file {} fragment {index} moved under us", entry.file_id)))
    }
}

/// First moment a path became fully readable.
#[derive(Clone, Debug, PartialEq)]
pub struct Visibility {
    pub path: String,
    pub epoch: u64,
    pub time: f64,
}

/// Emits each regular file matching a glob once, the first time the RO view
/// can read all of it.
pub struct Watch {
    pattern: glob::Pattern,
    seen: BTreeSet<String>,
}

impl Watch {
    pub fn new(pattern: &str) -> Result<Self> {
        let pattern = glob::Pattern::new(pattern).map_err(|e| Error::BadParams(format!("watch pattern: {e}")))?;
        Ok(Watch { pattern, seen: BTreeSet::new() })
    }

    pub fn seen(&self) -> &BTreeSet<String> {
        &self.seen
    }

    pub fn poll(&mut self, ro: &mut RoClient, now: f64) -> Result<Vec<Visibility>> {
        let sb = ro.view(now)?;
        let mut out = Vec::new();
        let mut stack = vec![(String::new(), 0u64)];
        while let Some((prefix, dir)) = stack.pop() {
            let Ok(listing) = ro.read_dir(&sb, dir) else { continue };
            for e in listing {
                let path = format!("{prefix}/{}", e.name);
                let Ok(entry) = ro.entry(&sb, e.file_id) else { continue };
                if entry.is_directory {
                    stack.push((path, e.file_id));
                    continue;
                }
                if self.seen.contains(&path) || !self.pattern.matches(&path) {
                    continue;
                }
                let readable = (0..entry.block_ids.len()).all(|i| ro.fragment(&entry, i).is_ok());
                if readable {
                    self.seen.insert(path.clone());
                    out.push(Visibility { path, epoch: sb.epoch, time: now });
                }
            }
        }
        out.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(out)
    }
}
