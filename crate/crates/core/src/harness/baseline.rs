//! A conventional per-file encrypted store used as the comparison arm. It
//! writes one backend file per frontend file the moment it changes, so its
//! trace reveals when, where and how much was written.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::script::{FsequenceScript, ScriptOp};
use crate::backend::TraceEvent;
use crate::codec::Cipher;

pub struct BaselineStore {
    cipher: Arc<Cipher>,
    cap: u64,
    /// Backend index per path, assigned on first write.
    slots: BTreeMap<String, u32>,
    files: BTreeMap<String, Vec<u8>>,
    trace: Vec<TraceEvent>,
}

impl BaselineStore {
    /// `block_capacity` converts block offsets in scripts to bytes.
    pub fn new(cipher: Arc<Cipher>, block_capacity: u64) -> Self {
        BaselineStore { cipher, cap: block_capacity, slots: BTreeMap::new(), files: BTreeMap::new(), trace: Vec::new() }
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn read(&self, path: &str) -> Option<&[u8]> {
        self.files.get(path).map(Vec::as_slice)
    }

    pub fn apply(&mut self, now: f64, op: &ScriptOp) {
        let path = match op {
            ScriptOp::Create(p) | ScriptOp::Mkdir(p) => {
                self.files.entry(p.clone()).or_default();
                p
            }
            ScriptOp::Put(p, d) => {
                self.files.insert(p.clone(), d.clone());
                p
            }
            ScriptOp::Write(p, off, d) => {
                let f = self.files.entry(p.clone()).or_default();
                let start = (off * self.cap) as usize;
                if f.len() < start + d.len() {
                    f.resize(start + d.len(), 0);
                }
                f[start..start + d.len()].copy_from_slice(d);
                p
            }
            ScriptOp::Resize(p, n) => {
                self.files.entry(p.clone()).or_default().resize(*n as usize, 0);
                p
            }
            ScriptOp::Delete(p) => {
                self.files.remove(p);
                p
            }
        };
        let next = self.slots.len() as u32;
        let index = *self.slots.entry(path.clone()).or_insert(next);
        let bytes = self.files.get(path).map_or(0, |f| self.cipher.seal(f).len() as u64);
        self.trace.push(TraceEvent {
            epoch_index: self.trace.len() as u64,
            virtual_time_s: now,
            wall_time_s: now,
            indices: vec![index],
            total_bytes: bytes,
        });
    }
}

/// Replays a script against a fresh baseline store and returns its trace.
pub fn baseline_store(cipher: Arc<Cipher>, block_capacity: u64, script: &FsequenceScript) -> Vec<TraceEvent> {
    let mut store = BaselineStore::new(cipher, block_capacity);
    for (t, op) in &script.ops {
        store.apply(*t, op);
    }
    store.trace
}
