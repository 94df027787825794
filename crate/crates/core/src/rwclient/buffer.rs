//! The pending-writes buffer: uncommitted fragments waiting for a sync.

use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Drain priority. Lower sorts first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FragmentClass {
    Directory,
    LeafNode,
    Regular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FragmentKey {
    Data { file_id: u64, index: u64 },
    /// A filetable leaf; its bytes are produced when it is placed.
    Leaf { slot: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BufferedFragment {
    pub key: FragmentKey,
    pub class: FragmentClass,
    /// Fragment bytes; empty for leaves.
    pub data: Vec<u8>,
    /// Bytes this fragment occupies once stored.
    pub len: usize,
    pub enqueued_at: f64,
}

#[derive(Debug, Default)]
pub struct PendingBuffer {
    queues: BTreeMap<(FragmentClass, u64), FragmentKey>,
    items: HashMap<FragmentKey, (u64, BufferedFragment)>,
    by_file: BTreeMap<u64, BTreeSet<u64>>,
    next_seq: u64,
    bytes: usize,
}

impl PendingBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a fragment. Rewriting a buffered fragment replaces its bytes but
    /// keeps its place in the queue.
    pub fn insert(&mut self, fragment: BufferedFragment) {
        let key = fragment.key;
        if let Some((seq, old)) = self.items.remove(&key) {
            self.bytes -= old.len;
            self.bytes += fragment.len;
            if old.class != fragment.class {
                self.queues.remove(&(old.class, seq));
                self.queues.insert((fragment.class, seq), key);
            }
            let fragment = BufferedFragment { enqueued_at: old.enqueued_at, ..fragment };
            self.items.insert(key, (seq, fragment));
            return;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.bytes += fragment.len;
        self.queues.insert((fragment.class, seq), key);
        if let FragmentKey::Data { file_id, index } = key {
            self.by_file.entry(file_id).or_default().insert(index);
        }
        self.items.insert(key, (seq, fragment));
    }

    pub fn get(&self, key: &FragmentKey) -> Option<&BufferedFragment> {
        self.items.get(key).map(|(_, f)| f)
    }

    pub fn data(&self, file_id: u64, index: u64) -> Option<&[u8]> {
        self.get(&FragmentKey::Data { file_id, index }).map(|f| f.data.as_slice())
    }

    pub fn remove(&mut self, key: &FragmentKey) -> Option<BufferedFragment> {
        let (seq, fragment) = self.items.remove(key)?;
        self.queues.remove(&(fragment.class, seq));
        self.bytes -= fragment.len;
        if let FragmentKey::Data { file_id, index } = *key {
            if let Some(set) = self.by_file.get_mut(&file_id) {
                set.remove(&index);
                if set.is_empty() {
                    self.by_file.remove(&file_id);
                }
            }
        }
        Some(fragment)
    }

    /// Drops every buffered fragment of `file_id` with index `>= from`.
    pub fn remove_file_from(&mut self, file_id: u64, from: u64) {
        let indices: Vec<u64> = self
            .by_file
            .get(&file_id)
            .map(|s| s.range(from..).copied().collect())
            .unwrap_or_default();
        for index in indices {
            self.remove(&FragmentKey::Data { file_id, index });
        }
    }

    pub fn has_file(&self, file_id: u64) -> bool {
        self.by_file.contains_key(&file_id)
    }

    pub fn pending_indices(&self, file_id: u64) -> impl Iterator<Item = u64> + '_ {
        self.by_file.get(&file_id).into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn files(&self) -> impl Iterator<Item = u64> + '_ {
        self.by_file.keys().copied()
    }

    /// Keys in drain order: directories, then leaves, then regular data,
    /// oldest first within each class.
    pub fn drain_order(&self) -> Vec<FragmentKey> {
        self.queues.values().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total buffered bytes.
    pub fn bytes(&self) -> usize {
        self.bytes
    }
}
