//! Bit-exact layouts for everything stored in backend files, plus the
//! authenticated encryption applied to each backend file.
//!
//! A backend file holds one *block pair*: two blocks of `B / 2` bytes each.
//! Every block starts with a one-byte kind flag:
//!
//! ```text
//! empty : 0x00, rest zero
//! full  : 0x01 | file_id u64 | fragment_index u64 | payload (capacity bytes)
//! split : 0x02 | count u16 | count x (file_id u64, offset u32, length u32) | payload
//! ```
//!
//! All integers are little-endian. Backend file 0 holds the superblock, which
//! is the same size as a block pair.

mod block;
mod crypto;
mod directory;
mod superblock;
mod wire;

pub use block::{decode_pair, encode_pair, Block, FullBlock, SplitBlock, SplitFragment};
pub use crypto::{Cipher, Kdf, Pbkdf2Sha256, KEY_LEN, NONCE_LEN, TAG_LEN};
pub use directory::{decode_directory, encode_directory, validate_name, DirEntry};
pub use superblock::{FsParams, Superblock, SUPERBLOCK_MAGIC, SUPERBLOCK_VERSION};
pub use wire::{decode_leaf, encode_entry, encode_leaf, entry_encoded_len};

use std::fmt;

use crate::error::{Error, Result};

/// Bytes taken by the kind flag, file id and fragment index of a full block.
pub const FULL_HEADER: usize = 17;
/// Bytes taken by the kind flag and table-length prefix of a split block.
pub const SPLIT_HEADER: usize = 3;
/// Bytes per split-block table entry.
pub const SPLIT_ENTRY: usize = 16;

/// File id marking a full block that holds a filetable leaf node. The
/// fragment index of such a block is the leaf slot.
pub const LEAF_FILE_ID: u64 = u64::MAX;

/// Location of one block in the backend. Blocks `2p` and `2p + 1` live in
/// backend file `p`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u64);

impl BlockId {
    /// Placeholder for fragments created by a resize that hold no data yet.
    pub const UNALLOCATED: BlockId = BlockId(u64::MAX);

    pub fn new(pair: u32, slot: u8) -> Self {
        debug_assert!(slot < 2);
        BlockId(u64::from(pair) * 2 + u64::from(slot))
    }

    pub fn is_unallocated(self) -> bool {
        self == Self::UNALLOCATED
    }

    pub fn pair(self) -> u32 {
        debug_assert!(!self.is_unallocated());
        (self.0 / 2) as u32
    }

    pub fn slot(self) -> usize {
        (self.0 % 2) as usize
    }
}

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_unallocated() {
            f.write_str("U")
        } else {
            write!(f, "#{}", self.0)
        }
    }
}

/// Size arithmetic derived from the pair size `B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pair_bytes: usize,
}

impl Geometry {
    pub const MIN_PAIR_BYTES: usize = 512;

    pub fn new(pair_bytes: usize) -> Result<Self> {
        if pair_bytes < Self::MIN_PAIR_BYTES || !pair_bytes.is_multiple_of(2) {
            return Err(Error::BadParams(format!(
                "pair size must be even and at least {} bytes, got {pair_bytes}",
                Self::MIN_PAIR_BYTES
            )));
        }
        if pair_bytes / 2 > u32::MAX as usize {
            return Err(Error::BadParams("pair size too large".into()));
        }
        Ok(Geometry { pair_bytes })
    }

    /// `B`: plaintext bytes per backend file.
    pub fn pair_bytes(&self) -> usize {
        self.pair_bytes
    }

    pub fn block_bytes(&self) -> usize {
        self.pair_bytes / 2
    }

    /// Payload bytes of a full block; the fragment size of every non-final
    /// fragment of a file.
    pub fn data_capacity(&self) -> usize {
        self.block_bytes() - FULL_HEADER
    }

    /// Largest fragment that fits alone in a split block.
    pub fn split_max(&self) -> usize {
        self.block_bytes() - SPLIT_HEADER - SPLIT_ENTRY
    }

    /// Whether a fragment of `len` bytes is stored in a full block (as
    /// opposed to a split block).
    pub fn is_full_stored(&self, len: usize) -> bool {
        len > self.split_max()
    }

    /// Number of fragments for a file of `size` bytes.
    pub fn fragment_count(&self, size: u64) -> usize {
        size.div_ceil(self.data_capacity() as u64) as usize
    }

    /// Length of fragment `index` of a file of `size` bytes.
    pub fn fragment_len(&self, size: u64, index: usize) -> usize {
        let cap = self.data_capacity() as u64;
        let start = index as u64 * cap;
        debug_assert!(start < size);
        (size - start).min(cap) as usize
    }
}

/// Metadata for one frontend file: its size and where each fragment lives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileEntry {
    pub file_id: u64,
    pub size: u64,
    pub is_directory: bool,
    pub block_ids: Vec<BlockId>,
}

impl FileEntry {
    pub fn empty(file_id: u64, is_directory: bool) -> Self {
        FileEntry { file_id, size: 0, is_directory, block_ids: Vec::new() }
    }
}
