use super::wire::{put_u16, put_u32, put_u64, Reader};
use super::{Geometry, FULL_HEADER, SPLIT_ENTRY, SPLIT_HEADER};
use crate::error::{Error, Result};

const FLAG_EMPTY: u8 = 0;
const FLAG_FULL: u8 = 1;
const FLAG_SPLIT: u8 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FullBlock {
    pub file_id: u64,
    pub fragment_index: u64,
    /// Always exactly `data_capacity` bytes. A shorter final fragment is
    /// zero padded; the file size says how much of it is real.
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitFragment {
    pub file_id: u64,
    pub data: Vec<u8>,
}

/// A block shared by several small fragments. Each file appears at most once.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitBlock {
    pub fragments: Vec<SplitFragment>,
}

impl SplitBlock {
    /// Bytes this block occupies when encoded (without trailing padding).
    pub fn used_bytes(&self) -> usize {
        SPLIT_HEADER + self.fragments.iter().map(|f| SPLIT_ENTRY + f.data.len()).sum::<usize>()
    }

    /// Whether a further fragment of `len` bytes fits.
    pub fn has_room(&self, geo: &Geometry, len: usize) -> bool {
        self.used_bytes() + SPLIT_ENTRY + len <= geo.block_bytes()
    }

    pub fn find(&self, file_id: u64) -> Option<&SplitFragment> {
        self.fragments.iter().find(|f| f.file_id == file_id)
    }

    /// `(file_id, offset-in-block, length)` for every fragment, in table order.
    pub fn extents(&self) -> Vec<(u64, u32, u32)> {
        let mut offset = SPLIT_HEADER + SPLIT_ENTRY * self.fragments.len();
        self.fragments
            .iter()
            .map(|f| {
                let ext = (f.file_id, offset as u32, f.data.len() as u32);
                offset += f.data.len();
                ext
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Block {
    Empty,
    Full(FullBlock),
    Split(SplitBlock),
}

impl Block {
    pub fn is_empty(&self) -> bool {
        matches!(self, Block::Empty)
    }

    /// Bytes of live payload in this block, used for fill accounting.
    pub fn payload_bytes(&self) -> usize {
        match self {
            Block::Empty => 0,
            Block::Full(f) => f.payload.len(),
            Block::Split(s) => s.fragments.iter().map(|f| f.data.len()).sum(),
        }
    }
}

fn encode_block(geo: &Geometry, block: &Block, out: &mut Vec<u8>) -> Result<()> {
    let start = out.len();
    let b = geo.block_bytes();
    match block {
        Block::Empty => {}
        Block::Full(full) => {
            if full.payload.len() != geo.data_capacity() {
                return Err(Error::Overfull {
                    needed: FULL_HEADER + full.payload.len(),
                    capacity: b,
                });
            }
            out.push(FLAG_FULL);
            put_u64(out, full.file_id);
            put_u64(out, full.fragment_index);
            out.extend_from_slice(&full.payload);
        }
        Block::Split(split) => {
            let needed = split.used_bytes();
            if needed > b || split.fragments.len() > u16::MAX as usize {
                return Err(Error::Overfull { needed, capacity: b });
            }
            if split.fragments.iter().any(|f| f.data.is_empty() || f.data.len() >= geo.data_capacity()) {
                return Err(Error::Corrupt("split fragment length out of range".into()));
            }
            out.push(FLAG_SPLIT);
            put_u16(out, split.fragments.len() as u16);
            for (file_id, offset, len) in split.extents() {
                put_u64(out, file_id);
                put_u32(out, offset);
                put_u32(out, len);
            }
            for f in &split.fragments {
                out.extend_from_slice(&f.data);
            }
        }
    }
    out.resize(start + b, 0);
    Ok(())
}

fn decode_block(geo: &Geometry, buf: &[u8]) -> Result<Block> {
    debug_assert_eq!(buf.len(), geo.block_bytes());
    let mut r = Reader::new(buf);
    match r.u8()? {
        FLAG_EMPTY => Ok(Block::Empty),
        FLAG_FULL => {
            let file_id = r.u64()?;
            let fragment_index = r.u64()?;
            let payload = r.bytes(geo.data_capacity())?.to_vec();
            Ok(Block::Full(FullBlock { file_id, fragment_index, payload }))
        }
        FLAG_SPLIT => {
            let count = r.u16()? as usize;
            let table_end = SPLIT_HEADER + SPLIT_ENTRY * count;
            if table_end > buf.len() {
                return Err(Error::Corrupt("split table overruns block".into()));
            }
            let mut table = Vec::with_capacity(count);
            for _ in 0..count {
                table.push((r.u64()?, r.u32()? as usize, r.u32()? as usize));
            }
            let mut spans: Vec<(usize, usize)> = Vec::with_capacity(count);
            let mut fragments = Vec::with_capacity(count);
            for &(file_id, offset, len) in &table {
                let end = offset.saturating_add(len);
                if len == 0 || len >= geo.data_capacity() || offset < table_end || end > buf.len() {
                    return Err(Error::Corrupt(format!("bad split extent ({offset}, {len})")));
                }
                if fragments.iter().any(|f: &SplitFragment| f.file_id == file_id) {
                    return Err(Error::Corrupt(format!("file {file_id} twice in one split block")));
                }
                spans.push((offset, end));
                fragments.push(SplitFragment { file_id, data: buf[offset..end].to_vec() });
            }
            spans.sort_unstable();
            if spans.windows(2).any(|w| w[0].1 > w[1].0) {
                return Err(Error::Corrupt("overlapping split extents".into()));
            }
            Ok(Block::Split(SplitBlock { fragments }))
        }
        flag => Err(Error::Corrupt(format!("unknown block flag {flag:#x}"))),
    }
}

/// Serialize two blocks into one `B`-byte backend plaintext.
pub fn encode_pair(geo: &Geometry, left: &Block, right: &Block) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(geo.pair_bytes());
    encode_block(geo, left, &mut out)?;
    encode_block(geo, right, &mut out)?;
    Ok(out)
}

pub fn decode_pair(geo: &Geometry, buf: &[u8]) -> Result<[Block; 2]> {
    if buf.len() != geo.pair_bytes() {
        return Err(Error::Corrupt(format!(
            "pair is {} bytes, expected {}",
            buf.len(),
            geo.pair_bytes()
        )));
    }
    let (l, r) = buf.split_at(geo.block_bytes());
    Ok([decode_block(geo, l)?, decode_block(geo, r)?])
}
