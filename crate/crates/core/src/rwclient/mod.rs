//! The single read/write client.
//!
//! Frontend operations only touch memory: changed fragments go into the
//! [`PendingBuffer`] and file entries into the working filetable. Nothing
//! reaches the backend until [`RwClient::sync_epoch`] stages the next
//! epoch's `k + 1` files and the following tick flushes them.

pub mod buffer;
mod lock;
mod sync;

pub use buffer::{BufferedFragment, FragmentClass, FragmentKey, PendingBuffer};
pub use lock::LockFile;
pub use sync::{Residency, RunUntil, SyncReport, Tick};

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::backend::{Backend, BackendReader, PairStore, TraceEvent};
use crate::codec::{
    decode_directory, encode_directory, validate_name, Block, BlockId, Cipher, DirEntry, FileEntry, FsParams,
    Geometry,
};
use crate::error::{Error, Result};
use crate::fstable::{extract_fragment, extract_leaf, split_path, Filetable};

/// Epoch timing and pair selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyncConfig {
    /// `k`: random pairs rewritten per epoch.
    pub drip_rate: u32,
    /// `t`: seconds per epoch.
    pub drip_time_s: f64,
    /// Fixed seed for reproducible pair selection; `None` seeds from the OS.
    pub seed: Option<u64>,
}

impl SyncConfig {
    pub fn from_params(params: &FsParams, seed: Option<u64>) -> Self {
        SyncConfig { drip_rate: params.drip_rate, drip_time_s: params.drip_time_ms as f64 / 1000.0, seed }
    }

    pub fn validate(&self, pair_count: u64) -> Result<()> {
        if self.drip_rate == 0 || u64::from(self.drip_rate) >= pair_count {
            return Err(Error::BadParams(format!("k = {} must be in 1..N-1", self.drip_rate)));
        }
        if self.drip_time_s.is_nan() || self.drip_time_s <= 0.0 {
            return Err(Error::BadParams("t must be positive".into()));
        }
        Ok(())
    }
}

pub struct RwClient {
    backend: Backend,
    table: Filetable,
    buffer: PendingBuffer,
    geo: Geometry,
    config: SyncConfig,
    rng: ChaCha20Rng,
    /// Plaintext of pairs staged but not yet flushed.
    staged_pairs: HashMap<u32, [Block; 2]>,
    epoch: u64,
    now: f64,
    next_tick: Option<f64>,
    overruns: u64,
    _lock: Option<LockFile>,
}

impl RwClient {
    /// Formats `store` as an empty filesystem and mounts it.
    pub fn init(store: Arc<dyn PairStore>, cipher: Arc<Cipher>, params: FsParams, seed: Option<u64>) -> Result<Self> {
        let config = SyncConfig::from_params(&params, seed);
        config.validate(params.pair_count)?;
        let backend = Backend::init(store, cipher, params)?;
        let table = Filetable::new(params)?;
        Ok(Self::assemble(backend, table, config, 0))
    }

    /// Mounts an existing filesystem. Buffered writes of a previous session
    /// are gone; only what was synced survives.
    pub fn mount(store: Arc<dyn PairStore>, cipher: Arc<Cipher>, seed: Option<u64>) -> Result<Self> {
        let (backend, sb) = Backend::open(store, cipher)?;
        let geo = sb.params.geometry()?;
        let reader = backend.reader().clone();
        let table = Filetable::from_superblock(&sb, |slot, id| extract_leaf(&reader.read_pair(&geo, id.pair())?, slot, id))?;
        let config = SyncConfig::from_params(&sb.params, seed);
        Ok(Self::assemble(backend, table, config, sb.epoch))
    }

    fn assemble(backend: Backend, table: Filetable, config: SyncConfig, epoch: u64) -> Self {
        let rng = match config.seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s),
            None => ChaCha20Rng::from_os_rng(),
        };
        RwClient {
            geo: *table.geometry(),
            backend,
            table,
            buffer: PendingBuffer::new(),
            config,
            rng,
            staged_pairs: HashMap::new(),
            epoch,
            now: 0.0,
            next_tick: None,
            overruns: 0,
            _lock: None,
        }
    }

    /// Keeps `lock` alive for as long as this client is mounted.
    pub fn hold_lock(&mut self, lock: LockFile) {
        self._lock = Some(lock);
    }

    pub fn params(&self) -> &FsParams {
        self.table.params()
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geo
    }

    pub fn config(&self) -> &SyncConfig {
        &self.config
    }

    /// Changes `k` for subsequent epochs (the superblock keeps its value).
    pub fn set_drip_rate(&mut self, k: u32) -> Result<()> {
        let config = SyncConfig { drip_rate: k, ..self.config };
        config.validate(self.params().pair_count)?;
        self.config = config;
        Ok(())
    }

    pub fn table(&self) -> &Filetable {
        &self.table
    }

    pub fn buffer(&self) -> &PendingBuffer {
        &self.buffer
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn backend_mut(&mut self) -> &mut Backend {
        &mut self.backend
    }

    pub fn reader(&self) -> &Arc<BackendReader> {
        self.backend.reader()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.backend.trace()
    }

    /// Syncs computed so far (the epoch number of the last staged superblock).
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Current time on the scheduler's clock, used to timestamp buffer entries.
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn set_now(&mut self, now: f64) {
        self.now = now;
    }

    pub fn overruns(&self) -> u64 {
        self.overruns
    }

    // ---- path handling ----

    fn read_dir_id(&self, dir_id: u64) -> Result<Vec<DirEntry>> {
        let entry = self.entry(dir_id)?;
        if !entry.is_directory {
            return Err(Error::NotADirectory(format!("file id {dir_id}")));
        }
        decode_directory(&self.read_content(&entry)?)
    }

    fn resolve(&self, path: &str) -> Result<u64> {
        crate::fstable::resolve_path(path, |id| self.read_dir_id(id))
    }

    /// `(parent id, parent listing, final name)` for a path that is not `/`.
    fn parent_of<'p>(&self, path: &'p str) -> Result<(u64, Vec<DirEntry>, &'p str)> {
        let parts = split_path(path)?;
        let (&name, dirs) = parts.split_last().ok_or_else(|| Error::InvalidName(path.to_string()))?;
        let mut parent = 0;
        for (i, d) in dirs.iter().enumerate() {
            parent = self
                .read_dir_id(parent)?
                .into_iter()
                .find(|e| e.name == *d)
                .map(|e| e.file_id)
                .ok_or_else(|| Error::NotFound(format!("/{}", dirs[..=i].join("/"))))?;
        }
        let listing = self.read_dir_id(parent)?;
        Ok((parent, listing, name))
    }

    fn entry(&self, file_id: u64) -> Result<FileEntry> {
        self.table.get(file_id).cloned().ok_or_else(|| Error::NotFound(format!("file id {file_id}")))
    }

    pub fn lookup(&self, path: &str) -> Result<u64> {
        self.resolve(path)
    }

    pub fn stat(&self, path: &str) -> Result<FileEntry> {
        self.entry(self.resolve(path)?)
    }

    pub fn exists(&self, path: &str) -> bool {
        self.resolve(path).is_ok()
    }

    pub fn list(&self, path: &str) -> Result<Vec<DirEntry>> {
        self.read_dir_id(self.resolve(path)?)
    }

    // ---- namespace operations ----

    pub fn create(&mut self, path: &str) -> Result<u64> {
        self.make(path, false, false)
    }

    pub fn mkdir(&mut self, path: &str) -> Result<u64> {
        self.make(path, true, false)
    }

    fn make(&mut self, path: &str, is_directory: bool, hidden: bool) -> Result<u64> {
        let (parent, mut listing, name) = self.parent_of(path)?;
        validate_name(name)?;
        if listing.iter().any(|e| e.name == name) {
            return Err(Error::Exists(path.to_string()));
        }
        let file_id = self.table.create(is_directory)?;
        if hidden {
            self.table.hide_until_synced(file_id);
        }
        listing.push(DirEntry { name: name.to_string(), file_id });
        self.set_content(parent, &encode_directory(&listing)?)?;
        self.queue_dirty_leaves();
        Ok(file_id)
    }

    pub fn delete(&mut self, path: &str) -> Result<()> {
        let (parent, mut listing, name) = self.parent_of(path)?;
        let pos = listing.iter().position(|e| e.name == name).ok_or_else(|| Error::NotFound(path.to_string()))?;
        let file_id = listing[pos].file_id;
        let entry = self.entry(file_id)?;
        if entry.is_directory && !self.read_dir_id(file_id)?.is_empty() {
            return Err(Error::IsDirectory(path.to_string()));
        }
        listing.remove(pos);
        self.set_content(parent, &encode_directory(&listing)?)?;
        self.buffer.remove_file_from(file_id, 0);
        self.table.remove(file_id);
        self.queue_dirty_leaves();
        Ok(())
    }

    /// Creates or overwrites `path` with `data`. A new file stays invisible
    /// to readers until all of its data is synced.
    pub fn put(&mut self, path: &str, data: &[u8]) -> Result<u64> {
        let file_id = match self.resolve(path) {
            Ok(id) => {
                if self.entry(id)?.is_directory {
                    return Err(Error::IsDirectory(path.to_string()));
                }
                id
            }
            Err(Error::NotFound(_)) => self.make(path, false, !data.is_empty())?,
            Err(e) => return Err(e),
        };
        self.set_content(file_id, data)?;
        self.queue_dirty_leaves();
        Ok(file_id)
    }

    // ---- data operations ----

    /// Writes `data` at a block-aligned `offset`, extending the file if
    /// needed. A write that ends inside a fragment keeps that fragment's
    /// remaining bytes.
    pub fn write(&mut self, path: &str, offset: u64, data: &[u8]) -> Result<()> {
        let file_id = self.regular_file(path)?;
        let mut entry = self.entry(file_id)?;
        let cap = self.geo.data_capacity() as u64;
        let end = offset + data.len() as u64;
        if !offset.is_multiple_of(cap) || offset > entry.size {
            return Err(Error::BadOffset(format!("write of {} bytes at {offset}", data.len())));
        }
        if data.is_empty() {
            return Ok(());
        }
        let new_size = entry.size.max(end);
        let first = (offset / cap) as usize;
        let last = ((end - 1) / cap) as usize;
        let mut changed = Vec::new();
        for i in first..=last {
            let start = i as u64 * cap;
            let new_len = self.geo.fragment_len(new_size, i);
            let old = self.current_fragment(&entry, i).ok();
            let mut bytes = old.clone().unwrap_or_default();
            bytes.resize(new_len, 0);
            let lo = start.max(offset);
            let hi = (start + new_len as u64).min(end);
            bytes[(lo - start) as usize..(hi - start) as usize]
                .copy_from_slice(&data[(lo - offset) as usize..(hi - offset) as usize]);
            if old.as_ref() != Some(&bytes) {
                changed.push((i, bytes));
            }
        }
        entry.size = new_size;
        entry.block_ids.resize(self.geo.fragment_count(new_size), BlockId::UNALLOCATED);
        self.apply(entry, changed);
        self.queue_dirty_leaves();
        Ok(())
    }

    /// Reads up to `length` bytes at a block-aligned `offset`.
    pub fn read(&self, path: &str, offset: u64, length: u64) -> Result<Vec<u8>> {
        let entry = self.entry(self.resolve(path)?)?;
        read_range(&self.geo, &entry, offset, length, |i| self.current_fragment(&entry, i))
    }

    pub fn read_all(&self, path: &str) -> Result<Vec<u8>> {
        self.read_content(&self.entry(self.resolve(path)?)?)
    }

    /// Changes the size. New fragments start unallocated and read as an IO
    /// error until written.
    pub fn resize(&mut self, path: &str, size: u64) -> Result<()> {
        let file_id = self.regular_file(path)?;
        let mut entry = self.entry(file_id)?;
        let old_count = entry.block_ids.len();
        let new_count = self.geo.fragment_count(size);
        let mut changed = Vec::new();
        if size < entry.size {
            self.buffer.remove_file_from(file_id, new_count as u64);
        }
        // The fragment that becomes (or stops being) the final one changes length.
        let boundary = old_count.min(new_count);
        if boundary > 0 {
            let i = boundary - 1;
            let new_len = self.geo.fragment_len(size, i);
            if new_len != self.geo.fragment_len(entry.size, i) {
                if let Ok(mut bytes) = self.current_fragment(&entry, i) {
                    bytes.resize(new_len, 0);
                    changed.push((i, bytes));
                }
            }
        }
        entry.size = size;
        entry.block_ids.resize(new_count, BlockId::UNALLOCATED);
        self.apply(entry, changed);
        self.queue_dirty_leaves();
        Ok(())
    }

    fn regular_file(&self, path: &str) -> Result<u64> {
        let id = self.resolve(path)?;
        if self.entry(id)?.is_directory {
            return Err(Error::IsDirectory(path.to_string()));
        }
        Ok(id)
    }

    /// Replaces a file's whole content, buffering only fragments that differ.
    fn set_content(&mut self, file_id: u64, data: &[u8]) -> Result<()> {
        let mut entry = self.entry(file_id)?;
        let cap = self.geo.data_capacity();
        let new_count = self.geo.fragment_count(data.len() as u64);
        let mut changed = Vec::new();
        for (i, chunk) in data.chunks(cap).enumerate() {
            let same = i < entry.block_ids.len()
                && self.geo.fragment_len(entry.size, i) == chunk.len()
                && self.current_fragment(&entry, i).is_ok_and(|old| old == chunk);
            if !same {
                changed.push((i, chunk.to_vec()));
            }
        }
        self.buffer.remove_file_from(file_id, new_count as u64);
        entry.size = data.len() as u64;
        entry.block_ids.resize(new_count, BlockId::UNALLOCATED);
        self.apply(entry, changed);
        Ok(())
    }

    /// Installs a new working entry and buffers its changed fragments.
    fn apply(&mut self, entry: FileEntry, changed: Vec<(usize, Vec<u8>)>) {
        let file_id = entry.file_id;
        if changed.is_empty() && !self.table.is_shadowed(file_id) {
            self.table.replace_published(entry);
            return;
        }
        let class = if entry.is_directory { FragmentClass::Directory } else { FragmentClass::Regular };
        self.table.begin_modification(file_id);
        self.table.set_working(entry);
        for (index, data) in changed {
            self.buffer.insert(BufferedFragment {
                key: FragmentKey::Data { file_id, index: index as u64 },
                class,
                len: data.len(),
                data,
                enqueued_at: self.now,
            });
        }
        if !self.buffer.has_file(file_id) {
            self.table.finish_modification(file_id);
        }
    }

    /// Moves leaves the filetable marked dirty into the buffer.
    fn queue_dirty_leaves(&mut self) {
        let len = self.geo.data_capacity();
        for slot in self.table.take_dirty_leaves() {
            self.buffer.insert(BufferedFragment {
                key: FragmentKey::Leaf { slot },
                class: FragmentClass::LeafNode,
                data: Vec::new(),
                len,
                enqueued_at: self.now,
            });
        }
    }

    // ---- read path ----

    fn read_content(&self, entry: &FileEntry) -> Result<Vec<u8>> {
        read_range(&self.geo, entry, 0, entry.size, |i| self.current_fragment(entry, i))
    }

    /// The newest bytes of fragment `index`: buffer, then staged pairs, then
    /// the backend.
    fn current_fragment(&self, entry: &FileEntry, index: usize) -> Result<Vec<u8>> {
        if let Some(data) = self.buffer.data(entry.file_id, index as u64) {
            return Ok(data.to_vec());
        }
        let id = entry.block_ids.get(index).copied().unwrap_or(BlockId::UNALLOCATED);
        if id.is_unallocated() {
            return Err(Error::Unavailable(format!("file {} fragment {index} not yet written", entry.file_id)));
        }
        let len = self.geo.fragment_len(entry.size, index);
        let found = match self.staged_pairs.get(&id.pair()) {
            Some(pair) => extract_fragment(&self.geo, pair, entry.file_id, index as u64, id, len),
            None => {
                let pair = self.backend.reader().read_pair(&self.geo, id.pair())?;
                extract_fragment(&self.geo, &pair, entry.file_id, index as u64, id, len)
            }
        };
        found.ok_or_else(|| Error::Corrupt(format!("file {} fragment {index} missing at {id:?}", entry.file_id)))
    }
}

/// Assembles `[offset, offset + length)` of a file from its fragments,
/// clipped at the end of the file.
pub(crate) fn read_range(
    geo: &Geometry,
    entry: &FileEntry,
    offset: u64,
    length: u64,
    mut fragment: impl FnMut(usize) -> Result<Vec<u8>>,
) -> Result<Vec<u8>> {
    let cap = geo.data_capacity() as u64;
    let end = offset.saturating_add(length).min(entry.size);
    if !offset.is_multiple_of(cap) || offset > entry.size {
        return Err(Error::BadOffset(format!("read of {length} bytes at {offset}")));
    }
    let mut out = Vec::with_capacity((end - offset) as usize);
    let mut pos = offset;
    while pos < end {
        let i = (pos / cap) as usize;
        let bytes = fragment(i)?;
        if bytes.len() != geo.fragment_len(entry.size, i) {
            return Err(Error::Corrupt(format!("file {} fragment {i} has wrong length", entry.file_id)));
        }
        let take = ((end - pos) as usize).min(bytes.len());
        out.extend_from_slice(&bytes[..take]);
        pos += take as u64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
