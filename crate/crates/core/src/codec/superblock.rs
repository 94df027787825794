use std::collections::BTreeMap;

use super::wire::{decode_entry, encode_entry, entry_encoded_len, put_u16, put_u32, put_u64, Reader};
use super::{BlockId, FileEntry, Geometry};
use crate::error::{Error, Result};

pub const SUPERBLOCK_MAGIC: [u8; 4] = *b"WOSB";
pub const SUPERBLOCK_VERSION: u16 = 1;

const HEADER_BYTES: usize = 4 + 2 + 4 + 8 + 4 + 8 + 4 + 4 + 8 + 8;
const ROOT_SLOT_BYTES: usize = 4 + 8;

/// Filesystem parameters fixed at init time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FsParams {
    /// `B`: plaintext bytes per backend file.
    pub pair_bytes: u32,
    /// `N`: number of backend files, superblock included.
    pub pair_count: u64,
    /// `k`: random pairs rewritten per epoch.
    pub drip_rate: u32,
    /// `t`: epoch length.
    pub drip_time_ms: u64,
    /// File entries per filetable leaf.
    pub leaf_capacity: u32,
    /// File entries the superblock cache holds before evicting to a leaf.
    pub cache_capacity: u32,
}

impl FsParams {
    /// Parameters with leaf and cache sizes scaled to the block size.
    pub fn new(pair_bytes: u32, pair_count: u64, drip_rate: u32, drip_time_ms: u64) -> Self {
        let block = pair_bytes / 2;
        FsParams {
            pair_bytes,
            pair_count,
            drip_rate,
            drip_time_ms,
            leaf_capacity: (block / 96).max(2),
            cache_capacity: (block / 128).max(4),
        }
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.pair_bytes as usize)
    }

    /// Number of leaf slots the superblock root can address.
    pub fn root_capacity(&self) -> u64 {
        ((self.pair_bytes as usize / 2 - 4) / ROOT_SLOT_BYTES) as u64
    }

    /// Upper bound on the number of files (keeps the filetable at height one).
    pub fn max_files(&self) -> u64 {
        self.root_capacity() * u64::from(self.leaf_capacity)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        let bad = |msg: String| Err(Error::BadParams(msg));
        if self.pair_count < 4 {
            return bad(format!("need at least 4 backend files, got {}", self.pair_count));
        }
        if self.pair_count > u64::from(u32::MAX) {
            return bad("too many backend files".into());
        }
        if self.drip_rate == 0 || u64::from(self.drip_rate) > self.pair_count - 1 {
            return bad(format!("drip rate must be in 1..={}", self.pair_count - 1));
        }
        if self.drip_time_ms == 0 {
            return bad("drip time must be positive".into());
        }
        if self.leaf_capacity < 1 || self.cache_capacity < 1 {
            return bad("leaf and cache capacities must be positive".into());
        }
        if HEADER_BYTES + 8 > self.pair_bytes as usize / 2 {
            return bad("pair size too small for the superblock".into());
        }
        Ok(())
    }
}

/// Backend file 0: parameters, filetable root and the file-entry cache.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Superblock {
    pub params: FsParams,
    pub next_file_id: u64,
    /// Number of syncs that produced this superblock.
    pub epoch: u64,
    /// Leaf slot to the block holding that leaf.
    pub root: BTreeMap<u32, BlockId>,
    pub cache: Vec<FileEntry>,
}

impl Superblock {
    /// Superblock of a brand-new filesystem: only the empty root directory.
    pub fn fresh(params: FsParams) -> Self {
        Superblock {
            params,
            next_file_id: 1,
            epoch: 0,
            root: BTreeMap::new(),
            cache: vec![FileEntry::empty(0, true)],
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let geo = self.params.geometry()?;
        let mut out = Vec::with_capacity(geo.pair_bytes());
        out.extend_from_slice(&SUPERBLOCK_MAGIC);
        put_u16(&mut out, SUPERBLOCK_VERSION);
        put_u32(&mut out, self.params.pair_bytes);
        put_u64(&mut out, self.params.pair_count);
        put_u32(&mut out, self.params.drip_rate);
        put_u64(&mut out, self.params.drip_time_ms);
        put_u32(&mut out, self.params.leaf_capacity);
        put_u32(&mut out, self.params.cache_capacity);
        put_u64(&mut out, self.next_file_id);
        put_u64(&mut out, self.epoch);

        let root_bytes = 4 + ROOT_SLOT_BYTES * self.root.len();
        if root_bytes > geo.block_bytes() {
            return Err(Error::TableFull);
        }
        put_u32(&mut out, self.root.len() as u32);
        for (slot, id) in &self.root {
            put_u32(&mut out, *slot);
            put_u64(&mut out, id.0);
        }

        let cache_bytes: usize = 4 + self.cache.iter().map(entry_encoded_len).sum::<usize>();
        let needed = out.len() + cache_bytes;
        if needed > geo.pair_bytes() {
            return Err(Error::Overfull { needed, capacity: geo.pair_bytes() });
        }
        put_u32(&mut out, self.cache.len() as u32);
        for e in &self.cache {
            encode_entry(&mut out, e);
        }
        out.resize(geo.pair_bytes(), 0);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        if r.bytes(4)? != SUPERBLOCK_MAGIC {
            return Err(Error::Corrupt("bad superblock magic".into()));
        }
        let version = r.u16()?;
        if version != SUPERBLOCK_VERSION {
            return Err(Error::Corrupt(format!("unsupported superblock version {version}")));
        }
        let params = FsParams {
            pair_bytes: r.u32()?,
            pair_count: r.u64()?,
            drip_rate: r.u32()?,
            drip_time_ms: r.u64()?,
            leaf_capacity: r.u32()?,
            cache_capacity: r.u32()?,
        };
        if buf.len() != params.pair_bytes as usize {
            return Err(Error::Corrupt("superblock length does not match its parameters".into()));
        }
        let next_file_id = r.u64()?;
        let epoch = r.u64()?;
        let root_len = r.u32()? as usize;
        let mut root = BTreeMap::new();
        for _ in 0..root_len {
            let slot = r.u32()?;
            root.insert(slot, BlockId(r.u64()?));
        }
        let cache_len = r.u32()? as usize;
        let cache = (0..cache_len).map(|_| decode_entry(&mut r)).collect::<Result<_>>()?;
        Ok(Superblock { params, next_file_id, epoch, root, cache })
    }
}
