use super::{BlockId, FileEntry};
use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn bytes(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| Error::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

const ENTRY_HEADER: usize = 8 + 8 + 1 + 4;

pub fn entry_encoded_len(entry: &FileEntry) -> usize {
    ENTRY_HEADER + 8 * entry.block_ids.len()
}

/// `file_id u64 | size u64 | flags u8 | count u32 | count x block_id u64`
pub fn encode_entry(out: &mut Vec<u8>, entry: &FileEntry) {
    put_u64(out, entry.file_id);
    put_u64(out, entry.size);
    out.push(u8::from(entry.is_directory));
    put_u32(out, entry.block_ids.len() as u32);
    for id in &entry.block_ids {
        put_u64(out, id.0);
    }
}

pub(crate) fn decode_entry(r: &mut Reader<'_>) -> Result<FileEntry> {
    let file_id = r.u64()?;
    let size = r.u64()?;
    let flags = r.u8()?;
    if flags > 1 {
        return Err(Error::Corrupt(format!("bad entry flags {flags:#x}")));
    }
    let count = r.u32()? as usize;
    let mut block_ids = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        block_ids.push(BlockId(r.u64()?));
    }
    Ok(FileEntry { file_id, size, is_directory: flags == 1, block_ids })
}

/// Leaf node payload: `count u32 | entries`.
pub fn encode_leaf(entries: &[FileEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, entries.len() as u32);
    for e in entries {
        encode_entry(&mut out, e);
    }
    out
}

pub fn decode_leaf(buf: &[u8]) -> Result<Vec<FileEntry>> {
    let mut r = Reader::new(buf);
    let count = r.u32()? as usize;
    (0..count).map(|_| decode_entry(&mut r)).collect()
}
