use super::wire::{put_u16, put_u32, put_u64, Reader};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirEntry {
    pub name: String,
    pub file_id: u64,
}

impl DirEntry {
    pub fn new(name: impl Into<String>, file_id: u64) -> Self {
        DirEntry { name: name.into(), file_id }
    }
}

pub fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || name == "." || name == ".." || name.contains(['/', '\0']) || name.len() > u16::MAX as usize {
        return Err(Error::InvalidName(name.to_string()));
    }
    Ok(())
}

/// `count u32 | count x (name_len u16 | name | file_id u64)`, in insertion order.
pub fn encode_directory(entries: &[DirEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(4 + entries.len() * 24);
    put_u32(&mut out, entries.len() as u32);
    let mut seen = std::collections::HashSet::with_capacity(entries.len());
    for e in entries {
        validate_name(&e.name)?;
        if !seen.insert(e.name.as_str()) {
            return Err(Error::DupName(e.name.clone()));
        }
        put_u16(&mut out, e.name.len() as u16);
        out.extend_from_slice(e.name.as_bytes());
        put_u64(&mut out, e.file_id);
    }
    Ok(out)
}

pub fn decode_directory(buf: &[u8]) -> Result<Vec<DirEntry>> {
    // A freshly created directory has no content at all.
    if buf.is_empty() {
        return Ok(Vec::new());
    }
    let mut r = Reader::new(buf);
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| Error::Corrupt("directory name is not utf-8".into()))?
            .to_string();
        let file_id = r.u64()?;
        out.push(DirEntry { name, file_id });
    }
    if r.position() != buf.len() {
        return Err(Error::Corrupt("trailing bytes after directory".into()));
    }
    Ok(out)
}
