//! The untrusted storage view: `N` equal-size encrypted files, written only
//! through staged, all-at-once flushes that are recorded in the trace.

mod store;
mod trace;

pub use store::{file_name, DirStore, MemStore, PairStore};
pub use trace::{parse_trace, read_trace_file, trace_to_csv, TraceEvent, TraceSink, TRACE_HEADER};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::codec::{decode_pair, encode_pair, Block, Cipher, FsParams, Geometry, Superblock};
use crate::error::{Error, Result};

/// Decrypting read access to a backend. Reads are local and never traced.
pub struct BackendReader {
    store: Arc<dyn PairStore>,
    cipher: Arc<Cipher>,
    reads: AtomicU64,
}

impl BackendReader {
    pub fn new(store: Arc<dyn PairStore>, cipher: Arc<Cipher>) -> Self {
        BackendReader { store, cipher, reads: AtomicU64::new(0) }
    }

    pub fn file_count(&self) -> u32 {
        self.store.file_count()
    }

    pub fn read_plain(&self, index: u32) -> Result<Vec<u8>> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        let envelope = self.store.read(index)?;
        self.cipher.open(&envelope)
    }

    pub fn read_superblock(&self) -> Result<Superblock> {
        Superblock::decode(&self.read_plain(0)?)
    }

    pub fn read_pair(&self, geo: &Geometry, index: u32) -> Result<[Block; 2]> {
        if index == 0 {
            return Err(Error::BadParams("backend file 0 is the superblock".into()));
        }
        decode_pair(geo, &self.read_plain(index)?)
    }

    /// Backend files decrypted so far.
    pub fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn store(&self) -> &Arc<dyn PairStore> {
        &self.store
    }

    pub fn cipher(&self) -> &Arc<Cipher> {
        &self.cipher
    }
}

/// What one flush put on the wire.
#[derive(Clone, Debug)]
pub struct FlushRecord {
    pub event: TraceEvent,
    /// `(index, envelope)` in the order they were written.
    pub files: Vec<(u32, Vec<u8>)>,
}

/// Writer side of a backend, owned by the read/write client.
pub struct Backend {
    reader: Arc<BackendReader>,
    params: FsParams,
    staged: BTreeMap<u32, Vec<u8>>,
    trace: Vec<TraceEvent>,
    sink: Option<TraceSink>,
    next_epoch: u64,
    dirty: bool,
}

impl Backend {
    /// Writes a fresh filesystem: an empty superblock in file 0 and
    /// `(Empty, Empty)` pairs everywhere else. Nothing is traced.
    pub fn init(store: Arc<dyn PairStore>, cipher: Arc<Cipher>, params: FsParams) -> Result<Self> {
        params.validate()?;
        if u64::from(store.file_count()) != params.pair_count {
            return Err(Error::BadParams(format!(
                "store holds {} files but N = {}",
                store.file_count(),
                params.pair_count
            )));
        }
        let geo = params.geometry()?;
        store.write(0, &cipher.seal(&Superblock::fresh(params).encode()?))?;
        let empty = encode_pair(&geo, &Block::Empty, &Block::Empty)?;
        for i in 1..store.file_count() {
            store.write(i, &cipher.seal(&empty))?;
        }
        Ok(Self::with_reader(Arc::new(BackendReader::new(store, cipher)), params))
    }

    /// Attaches to an existing backend, returning its current superblock.
    pub fn open(store: Arc<dyn PairStore>, cipher: Arc<Cipher>) -> Result<(Self, Superblock)> {
        let reader = Arc::new(BackendReader::new(store, cipher));
        let sb = reader.read_superblock()?;
        sb.params.validate()?;
        if u64::from(reader.file_count()) != sb.params.pair_count {
            return Err(Error::Corrupt("backend file count does not match superblock".into()));
        }
        let mut backend = Self::with_reader(reader, sb.params);
        backend.next_epoch = sb.epoch;
        Ok((backend, sb))
    }

    fn with_reader(reader: Arc<BackendReader>, params: FsParams) -> Self {
        Backend {
            reader,
            params,
            staged: BTreeMap::new(),
            trace: Vec::new(),
            sink: None,
            next_epoch: 0,
            dirty: false,
        }
    }

    pub fn reader(&self) -> &Arc<BackendReader> {
        &self.reader
    }

    pub fn params(&self) -> &FsParams {
        &self.params
    }

    pub fn set_trace_sink(&mut self, sink: TraceSink) {
        self.sink = Some(sink);
    }

    /// Encrypts `plaintext` (one pair or the superblock) for the next flush.
    pub fn stage(&mut self, index: u32, plaintext: &[u8]) -> Result<()> {
        if u64::from(index) >= self.params.pair_count {
            return Err(Error::NotFound(format!("backend file {index}")));
        }
        if plaintext.len() != self.params.pair_bytes as usize {
            return Err(Error::Corrupt(format!("staged plaintext is {} bytes", plaintext.len())));
        }
        let envelope = self.reader.cipher.seal(plaintext);
        self.staged.insert(index, envelope);
        Ok(())
    }

    pub fn staged_indices(&self) -> Vec<u32> {
        self.staged.keys().copied().collect()
    }

    /// Writes every staged file and records one trace event. Data files go
    /// out first and the superblock last, so a crash in between leaves the
    /// previous superblock in charge.
    pub fn flush(&mut self, virtual_time_s: f64, wall_time_s: f64) -> Result<FlushRecord> {
        self.flush_limited(virtual_time_s, wall_time_s, usize::MAX)
    }

    /// Like [`Backend::flush`] but stops after `limit` files, simulating a
    /// crash mid-flush. Anything short of the full set is a `PartialFlush`.
    pub fn flush_limited(&mut self, virtual_time_s: f64, wall_time_s: f64, limit: usize) -> Result<FlushRecord> {
        if self.staged.is_empty() {
            return Err(Error::NothingStaged);
        }
        let mut staged = std::mem::take(&mut self.staged);
        let total = staged.len();
        let superblock = staged.remove(&0);
        let mut order: Vec<(u32, Vec<u8>)> = staged.into_iter().collect();
        order.extend(superblock.map(|env| (0, env)));

        let mut files = Vec::with_capacity(total);
        for (index, envelope) in order {
            if files.len() == limit {
                self.dirty = true;
                return Err(Error::PartialFlush { written: files.len(), staged: total });
            }
            self.reader.store.write(index, &envelope)?;
            files.push((index, envelope));
        }

        let mut indices: Vec<u32> = files.iter().map(|(i, _)| *i).collect();
        indices.sort_unstable();
        let event = TraceEvent {
            epoch_index: self.next_epoch,
            virtual_time_s,
            wall_time_s,
            indices,
            total_bytes: files.iter().map(|(_, e)| e.len() as u64).sum(),
        };
        self.next_epoch += 1;
        if let Some(sink) = self.sink.as_mut() {
            sink.append(&event)?;
        }
        self.trace.push(event.clone());
        Ok(FlushRecord { event, files })
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn clear_trace(&mut self) {
        self.trace.clear();
    }

    /// Set once a flush was interrupted.
    pub fn is_dirty(&self) -> bool {
        self.dirty
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::KEY_LEN;

    fn cipher() -> Arc<Cipher> {
        Arc::new(Cipher::seeded(&[3u8; KEY_LEN], 5))
    }

    fn fresh(n: u64) -> (Arc<MemStore>, Backend) {
        let store = Arc::new(MemStore::new(n as u32));
        let backend = Backend::init(store.clone(), cipher(), FsParams::new(4096, n, 3, 1000)).unwrap();
        (store, backend)
    }

    #[test]
    fn init_writes_equal_length_files() {
        let (store, backend) = fresh(8);
        let files = store.snapshot();
        assert_eq!(files.len(), 8);
        assert!(files.iter().all(|f| f.len() == 4096 + Cipher::overhead()));
        assert!(backend.trace().is_empty());
    }

    #[test]
    fn fresh_pairs_are_empty_and_superblock_has_root() {
        let (_, backend) = fresh(8);
        let geo = backend.params().geometry().unwrap();
        assert_eq!(backend.reader().read_pair(&geo, 3).unwrap(), [Block::Empty, Block::Empty]);
        let sb = backend.reader().read_superblock().unwrap();
        assert_eq!(sb.cache.len(), 1);
        assert_eq!(sb.cache[0].file_id, 0);
        assert!(sb.cache[0].is_directory);
    }

    #[test]
    fn init_rejects_non_empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("junk"), b"x").unwrap();
        assert!(matches!(DirStore::create(dir.path(), 8), Err(Error::Exists(_))));
    }

    #[test]
    fn flush_records_one_event() {
        let (store, mut backend) = fresh(16);
        let geo = backend.params().geometry().unwrap();
        let empty = encode_pair(&geo, &Block::Empty, &Block::Empty).unwrap();
        let sb = Superblock::fresh(*backend.params()).encode().unwrap();
        backend.stage(0, &sb).unwrap();
        for i in [12, 5, 9] {
            backend.stage(i, &empty).unwrap();
        }
        let before = store.snapshot();
        let record = backend.flush(1.0, 1.0).unwrap();
        let env = (4096 + Cipher::overhead()) as u64;
        assert_eq!(record.event.indices, vec![0, 5, 9, 12]);
        assert_eq!(record.event.total_bytes, 4 * env);
        assert_eq!(record.files.last().unwrap().0, 0, "superblock goes last");
        let after = store.snapshot();
        for i in 0..16 {
            assert_eq!(before[i] != after[i], [0, 5, 9, 12].contains(&i), "file {i}");
            assert_eq!(after[i].len() as u64, env);
        }
        assert_eq!(backend.trace().len(), 1);
    }

    #[test]
    fn flush_without_staging_fails() {
        let (_, mut backend) = fresh(8);
        assert!(matches!(backend.flush(0.0, 0.0), Err(Error::NothingStaged)));
    }

    #[test]
    fn interrupted_flush_marks_store_dirty() {
        let (store, mut backend) = fresh(8);
        let geo = backend.params().geometry().unwrap();
        let empty = encode_pair(&geo, &Block::Empty, &Block::Empty).unwrap();
        backend.stage(0, &Superblock::fresh(*backend.params()).encode().unwrap()).unwrap();
        backend.stage(2, &empty).unwrap();
        backend.stage(4, &empty).unwrap();
        let before = store.snapshot();
        let err = backend.flush_limited(0.0, 0.0, 1).unwrap_err();
        assert!(matches!(err, Error::PartialFlush { written: 1, staged: 3 }));
        assert!(backend.is_dirty());
        let after = store.snapshot();
        assert_ne!(before[2], after[2]);
        assert_eq!(before[0], after[0]);
        assert!(backend.trace().is_empty());
    }

    #[test]
    fn dir_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("backend");
        let store = Arc::new(DirStore::create(&path, 6).unwrap());
        Backend::init(store, cipher(), FsParams::new(2048, 6, 2, 1000)).unwrap();
        assert!(path.join("00000005.blk").exists());
        let reopened = Arc::new(DirStore::open(&path).unwrap());
        assert_eq!(reopened.file_count(), 6);
        let (_, sb) = Backend::open(reopened, cipher()).unwrap();
        assert_eq!(sb.params.pair_count, 6);
    }
}
