//! Filetable metadata: working entries, the superblock entry cache with
//! most-common-leaf eviction, the shadow table that pins the published
//! version of files with buffered fragments, and path resolution.
//!
//! The filetable B-tree has height at most one. Leaf membership is a fixed
//! partition: file `f` belongs to leaf slot `f / leaf_capacity`. Leaves are
//! ordinary full blocks tagged with [`LEAF_FILE_ID`] whose fragment index is
//! the slot, addressed by block id from the superblock root.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::codec::{
    decode_leaf, encode_leaf, entry_encoded_len, Block, BlockId, DirEntry, FileEntry, FsParams, Geometry, Superblock,
    LEAF_FILE_ID,
};
use crate::error::{Error, Result};

/// Where the persisted copy of a working entry lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Cache,
    Leaf(u32),
    /// Chosen for eviction to this leaf; stays in the cache until the leaf
    /// block has been placed in the backend.
    Evicting(u32),
}

/// Published version of a file that has fragments in the pending buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shadow {
    /// The file was created together with its data and is not visible yet.
    Absent,
    Entry(FileEntry),
}

/// References that were dropped from the published view and must stay
/// untouched until a superblock without them is on disk.
#[derive(Clone, Debug, Default)]
pub struct Retired {
    pub entries: Vec<FileEntry>,
    pub leaves: Vec<BlockId>,
}

impl Retired {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.leaves.is_empty()
    }
}

/// The read/write client's complete filetable.
#[derive(Clone, Debug)]
pub struct Filetable {
    params: FsParams,
    geo: Geometry,
    working: BTreeMap<u64, FileEntry>,
    location: HashMap<u64, Location>,
    shadow: BTreeMap<u64, Shadow>,
    retired: Retired,
    root: BTreeMap<u32, BlockId>,
    dirty_leaves: BTreeSet<u32>,
    next_file_id: u64,
}

impl Filetable {
    /// A table holding only the empty root directory.
    pub fn new(params: FsParams) -> Result<Self> {
        Self::from_superblock(&Superblock::fresh(params), |_, _| Ok(Vec::new()))
    }

    /// Rebuilds the working table from a superblock, loading every leaf.
    pub fn from_superblock(
        sb: &Superblock,
        mut load_leaf: impl FnMut(u32, BlockId) -> Result<Vec<FileEntry>>,
    ) -> Result<Self> {
        let params = sb.params;
        let mut table = Filetable {
            geo: params.geometry()?,
            params,
            working: BTreeMap::new(),
            location: HashMap::new(),
            shadow: BTreeMap::new(),
            retired: Retired::default(),
            root: sb.root.clone(),
            dirty_leaves: BTreeSet::new(),
            next_file_id: sb.next_file_id,
        };
        for (&slot, &id) in &sb.root {
            for entry in load_leaf(slot, id)? {
                if table.leaf_slot(entry.file_id) != slot {
                    return Err(Error::Corrupt(format!("file {} in leaf {slot}", entry.file_id)));
                }
                table.location.insert(entry.file_id, Location::Leaf(slot));
                table.working.insert(entry.file_id, entry);
            }
        }
        for entry in &sb.cache {
            // The cache is newer than any leaf copy.
            if let Some(Location::Leaf(slot)) = table.location.get(&entry.file_id) {
                table.dirty_leaves.insert(*slot);
            }
            table.location.insert(entry.file_id, Location::Cache);
            table.working.insert(entry.file_id, entry.clone());
        }
        if !table.working.contains_key(&0) {
            return Err(Error::Corrupt("root directory entry missing".into()));
        }
        Ok(table)
    }

    pub fn params(&self) -> &FsParams {
        &self.params
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geo
    }

    pub fn leaf_slot(&self, file_id: u64) -> u32 {
        (file_id / u64::from(self.params.leaf_capacity)) as u32
    }

    pub fn len(&self) -> usize {
        self.working.len()
    }

    pub fn is_empty(&self) -> bool {
        self.working.is_empty()
    }

    pub fn get(&self, file_id: u64) -> Option<&FileEntry> {
        self.working.get(&file_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &FileEntry> {
        self.working.values()
    }

    pub fn location(&self, file_id: u64) -> Option<Location> {
        self.location.get(&file_id).copied()
    }

    pub fn root(&self) -> &BTreeMap<u32, BlockId> {
        &self.root
    }

    pub fn shadow(&self) -> &BTreeMap<u64, Shadow> {
        &self.shadow
    }

    pub fn retired(&self) -> &Retired {
        &self.retired
    }

    /// Hands over the retired references; the caller protects them for
    /// exactly one sync.
    pub fn take_retired(&mut self) -> Retired {
        std::mem::take(&mut self.retired)
    }

    pub fn next_file_id(&self) -> u64 {
        self.next_file_id
    }

    /// Mints a new file id with an empty entry in the cache.
    pub fn create(&mut self, is_directory: bool) -> Result<u64> {
        if self.next_file_id >= self.params.max_files() {
            return Err(Error::TableFull);
        }
        let file_id = self.next_file_id;
        self.next_file_id += 1;
        self.upsert(FileEntry::empty(file_id, is_directory));
        Ok(file_id)
    }

    /// Stores a new working version in the cache, evicting if it overflows.
    pub fn upsert(&mut self, entry: FileEntry) {
        let file_id = entry.file_id;
        match self.location.insert(file_id, Location::Cache) {
            Some(Location::Leaf(slot)) | Some(Location::Evicting(slot)) => {
                self.dirty_leaves.insert(slot);
            }
            _ => {}
        }
        self.working.insert(file_id, entry);
        self.evict_if_needed();
    }

    /// Replaces the working entry without touching the published view.
    /// Only valid while the file is shadowed.
    pub fn set_working(&mut self, entry: FileEntry) {
        debug_assert!(self.shadow.contains_key(&entry.file_id));
        self.working.insert(entry.file_id, entry);
    }

    pub fn remove(&mut self, file_id: u64) -> Option<FileEntry> {
        if let Some(old) = self.published(file_id) {
            self.retired.entries.push(old);
        }
        self.shadow.remove(&file_id);
        match self.location.remove(&file_id) {
            Some(Location::Leaf(slot)) | Some(Location::Evicting(slot)) => {
                self.dirty_leaves.insert(slot);
            }
            _ => {}
        }
        self.working.remove(&file_id)
    }

    /// What readers see for `file_id`.
    pub fn published(&self, file_id: u64) -> Option<FileEntry> {
        match self.shadow.get(&file_id) {
            Some(Shadow::Absent) => None,
            Some(Shadow::Entry(e)) => Some(e.clone()),
            None => self.working.get(&file_id).cloned(),
        }
    }

    pub fn is_shadowed(&self, file_id: u64) -> bool {
        self.shadow.contains_key(&file_id)
    }

    /// Pins the current published version before the first fragment of a
    /// file enters the buffer.
    pub fn begin_modification(&mut self, file_id: u64) {
        if !self.shadow.contains_key(&file_id) {
            let pinned = match self.working.get(&file_id) {
                Some(e) => Shadow::Entry(e.clone()),
                None => Shadow::Absent,
            };
            self.shadow.insert(file_id, pinned);
        }
    }

    /// Hides a file that was just created until its data is synced.
    pub fn hide_until_synced(&mut self, file_id: u64) {
        self.shadow.insert(file_id, Shadow::Absent);
    }

    /// Publishes the working version once no fragments are buffered.
    pub fn finish_modification(&mut self, file_id: u64) {
        let Some(old) = self.shadow.remove(&file_id) else { return };
        if let Shadow::Entry(old) = old {
            if self.working.get(&file_id) != Some(&old) {
                self.retired.entries.push(old);
            }
        }
        if let Some(entry) = self.working.get(&file_id).cloned() {
            self.upsert(entry);
        }
    }

    /// Publishes a metadata-only change (no buffered fragments involved).
    pub fn replace_published(&mut self, entry: FileEntry) {
        debug_assert!(!self.shadow.contains_key(&entry.file_id));
        if let Some(old) = self.working.get(&entry.file_id) {
            if *old != entry {
                self.retired.entries.push(old.clone());
            }
        }
        self.upsert(entry);
    }

    fn cache_members(&self) -> impl Iterator<Item = u64> + '_ {
        self.location.iter().filter(|(_, l)| **l == Location::Cache).map(|(f, _)| *f)
    }

    fn cache_bytes(&self) -> usize {
        self.location
            .iter()
            .filter(|(_, l)| matches!(l, Location::Cache | Location::Evicting(_)))
            .filter_map(|(f, _)| self.published(*f))
            .map(|e| entry_encoded_len(&e))
            .sum()
    }

    fn over_capacity(&self) -> bool {
        self.cache_members().count() > self.params.cache_capacity as usize
            || self.cache_bytes() > self.geo.block_bytes() - 64
    }

    fn evict_if_needed(&mut self) {
        while self.over_capacity() {
            let Some(slot) = self.eviction_group() else { break };
            let members: Vec<u64> =
                self.cache_members().filter(|&f| self.leaf_slot(f) == slot).collect();
            for f in members {
                self.location.insert(f, Location::Evicting(slot));
            }
            self.dirty_leaves.insert(slot);
        }
    }

    /// Leaf slot with the most cache entries; ties go to the lowest slot.
    pub fn eviction_group(&self) -> Option<u32> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for f in self.cache_members() {
            *counts.entry(self.leaf_slot(f)).or_default() += 1;
        }
        let best = counts.values().copied().max()?;
        counts.into_iter().find(|&(_, c)| c == best).map(|(slot, _)| slot)
    }

    /// Leaves whose content changed and must be rewritten.
    pub fn take_dirty_leaves(&mut self) -> BTreeSet<u32> {
        std::mem::take(&mut self.dirty_leaves)
    }

    pub fn has_dirty_leaves(&self) -> bool {
        !self.dirty_leaves.is_empty()
    }

    /// Entries a leaf written now would hold: every member assigned to the
    /// slot, in their published versions.
    pub fn leaf_members(&self, slot: u32) -> Vec<FileEntry> {
        let mut out: Vec<FileEntry> = self
            .location
            .iter()
            .filter(|(_, l)| matches!(l, Location::Leaf(s) | Location::Evicting(s) if *s == slot))
            .filter_map(|(f, _)| self.published(*f))
            .collect();
        out.sort_by_key(|e| e.file_id);
        out
    }

    /// Serialized leaf payload padded to the full-block capacity.
    pub fn materialize_leaf(&self, slot: u32) -> Result<(Vec<u8>, Vec<u64>)> {
        let members = self.leaf_members(slot);
        let mut payload = encode_leaf(&members);
        if payload.len() > self.geo.data_capacity() {
            return Err(Error::TableFull);
        }
        payload.resize(self.geo.data_capacity(), 0);
        Ok((payload, members.iter().map(|e| e.file_id).collect()))
    }

    /// Records that leaf `slot` now lives at `block`, holding `members`.
    pub fn leaf_placed(&mut self, slot: u32, block: BlockId, members: &[u64]) {
        if let Some(old) = self.root.insert(slot, block) {
            self.retired.leaves.push(old);
        }
        for f in members {
            if self.location.get(f) == Some(&Location::Evicting(slot)) {
                self.location.insert(*f, Location::Leaf(slot));
            }
        }
    }

    /// Drops a leaf that no longer has members.
    pub fn leaf_dropped(&mut self, slot: u32) {
        if let Some(old) = self.root.remove(&slot) {
            self.retired.leaves.push(old);
        }
    }

    /// The superblock readers will see after this sync.
    pub fn publish_view(&self, epoch: u64) -> Superblock {
        let mut cache: Vec<FileEntry> = self
            .location
            .iter()
            .filter(|(_, l)| matches!(l, Location::Cache | Location::Evicting(_)))
            .filter_map(|(f, _)| self.published(*f))
            .collect();
        cache.sort_by_key(|e| e.file_id);
        Superblock {
            params: self.params,
            next_file_id: self.next_file_id,
            epoch,
            root: self.root.clone(),
            cache,
        }
    }
}

/// Pulls fragment `index` of `file_id` (expected `len` bytes, stored at
/// `id`) out of a decoded pair. Full-stored fragments sit exactly at `id`;
/// small ones may be in either block of the pair.
pub fn extract_fragment(
    geo: &Geometry,
    pair: &[Block; 2],
    file_id: u64,
    index: u64,
    id: BlockId,
    len: usize,
) -> Option<Vec<u8>> {
    if geo.is_full_stored(len) {
        match &pair[id.slot()] {
            Block::Full(f) if f.file_id == file_id && f.fragment_index == index => Some(f.payload[..len].to_vec()),
            _ => None,
        }
    } else {
        pair.iter().find_map(|b| match b {
            Block::Split(s) => s.find(file_id).filter(|f| f.data.len() == len).map(|f| f.data.clone()),
            _ => None,
        })
    }
}

/// Pulls the leaf for `slot` out of a decoded pair.
pub fn extract_leaf(pair: &[Block; 2], slot: u32, id: BlockId) -> Result<Vec<FileEntry>> {
    match &pair[id.slot()] {
        Block::Full(f) if f.file_id == LEAF_FILE_ID && f.fragment_index == u64::from(slot) => decode_leaf(&f.payload),
        _ => Err(Error::Corrupt(format!("leaf {slot} missing at {id:?}"))),
    }
}

/// Decodes a leaf node's payload out of its full block.
pub fn parse_leaf_payload(payload: &[u8]) -> Result<Vec<FileEntry>> {
    decode_leaf(payload)
}

/// Reader-side lookup through a published superblock: the cache first, then
/// at most one leaf.
pub fn lookup_published(
    sb: &Superblock,
    file_id: u64,
    load_leaf: impl FnOnce(u32, BlockId) -> Result<Vec<FileEntry>>,
) -> Result<FileEntry> {
    if let Some(e) = sb.cache.iter().find(|e| e.file_id == file_id) {
        return Ok(e.clone());
    }
    let slot = (file_id / u64::from(sb.params.leaf_capacity)) as u32;
    let not_found = || Error::NotFound(format!("file id {file_id}"));
    let &leaf = sb.root.get(&slot).ok_or_else(not_found)?;
    load_leaf(slot, leaf)?.into_iter().find(|e| e.file_id == file_id).ok_or_else(not_found)
}

/// Splits an absolute path into its components.
pub fn split_path(path: &str) -> Result<Vec<&str>> {
    if !path.starts_with('/') {
        return Err(Error::InvalidName(path.to_string()));
    }
    Ok(path.split('/').filter(|c| !c.is_empty()).collect())
}

/// Walks directory files from the root (file id 0). `read_dir` must fail
/// with `NotADirectory` when asked to list a regular file.
pub fn resolve_path(path: &str, mut read_dir: impl FnMut(u64) -> Result<Vec<DirEntry>>) -> Result<u64> {
    let mut current = 0;
    for name in split_path(path)? {
        current = read_dir(current)?
            .into_iter()
            .find(|e| e.name == name)
            .map(|e| e.file_id)
            .ok_or_else(|| Error::NotFound(path.to_string()))?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(leaf_capacity: u32, cache_capacity: u32) -> FsParams {
        FsParams { leaf_capacity, cache_capacity, ..FsParams::new(4096, 16, 3, 1000) }
    }

    /// Brute force: count cache entries per leaf, pick the largest group,
    /// lowest slot on ties.
    fn oracle_group(ids: &[u64], leaf_capacity: u64) -> u32 {
        let mut best = (0usize, u32::MAX);
        for slot in 0..=ids.iter().max().unwrap() / leaf_capacity {
            let n = ids.iter().filter(|&&f| f / leaf_capacity == slot).count();
            if n > best.0 {
                best = (n, slot as u32);
            }
        }
        best.1
    }

    fn cached(t: &Filetable) -> Vec<u64> {
        let mut v: Vec<u64> = t.cache_members().collect();
        v.sort();
        v
    }

    #[test]
    fn root_directory_always_present() {
        let t = Filetable::new(params(8, 8)).unwrap();
        assert!(t.get(0).unwrap().is_directory);
        let sb = t.publish_view(0);
        assert_eq!(lookup_published(&sb, 0, |_, _| unreachable!()).unwrap().file_id, 0);
    }

    #[test]
    fn upsert_below_capacity_writes_no_leaf() {
        let mut t = Filetable::new(params(8, 8)).unwrap();
        for _ in 0..4 {
            t.create(false).unwrap();
        }
        assert!(!t.has_dirty_leaves());
    }

    #[test]
    fn eviction_takes_most_common_leaf() {
        // Leaves of 3: files 0,1,2 -> slot 0 (A), 3,4 -> slot 1 (B).
        let mut t = Filetable::new(params(3, 4)).unwrap();
        for _ in 0..4 {
            t.create(false).unwrap();
        }
        let before = [0, 1, 2, 3, 4];
        assert_eq!(oracle_group(&before, 3), 0);
        assert_eq!(t.take_dirty_leaves().into_iter().collect::<Vec<_>>(), vec![0]);
        assert_eq!(cached(&t), vec![3, 4]);
        for f in 0..3 {
            assert_eq!(t.location(f), Some(Location::Evicting(0)));
        }
    }

    #[test]
    fn eviction_tie_goes_to_lowest_slot() {
        // Leaves of 2: {0,1} -> slot 0, {2,3} -> slot 1; capacity 3.
        let mut t = Filetable::new(params(2, 3)).unwrap();
        for _ in 0..3 {
            t.create(false).unwrap();
        }
        assert_eq!(oracle_group(&[0, 1, 2, 3], 2), 0);
        assert_eq!(t.take_dirty_leaves().into_iter().collect::<Vec<_>>(), vec![0]);
        assert_eq!(cached(&t), vec![2, 3]);
    }

    #[test]
    fn eviction_matches_oracle_on_random_tables() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let leaf = rng.random_range(1..6u32);
            let cap = rng.random_range(2..10u32);
            let mut t = Filetable::new(params(leaf, cap)).unwrap();
            let n = rng.random_range(1..30);
            for _ in 0..n {
                let id = t.create(false).unwrap();
                // Touch a random older file to shuffle cache membership.
                let other = rng.random_range(0..=id);
                if let Some(e) = t.get(other).cloned() {
                    let members: Vec<u64> = cached(&t);
                    let mut with_other = members.clone();
                    if !with_other.contains(&other) {
                        with_other.push(other);
                    }
                    let expect = (with_other.len() > cap as usize).then(|| oracle_group(&with_other, u64::from(leaf)));
                    t.take_dirty_leaves();
                    let was_leaf = matches!(t.location(other), Some(Location::Leaf(_) | Location::Evicting(_)));
                    t.upsert(e);
                    let dirty = t.take_dirty_leaves();
                    if let Some(slot) = expect {
                        assert!(dirty.contains(&slot), "expected eviction of slot {slot}, got {dirty:?}");
                    } else if !was_leaf {
                        assert!(dirty.is_empty());
                    }
                }
            }
            // Union of cache and leaves is an exact map.
            assert_eq!(t.location.len(), t.working.len());
        }
    }

    #[test]
    fn shadow_pins_published_version() {
        let mut t = Filetable::new(params(8, 8)).unwrap();
        let f = t.create(false).unwrap();
        let v1 = FileEntry { file_id: f, size: 10, is_directory: false, block_ids: vec![BlockId(4)] };
        t.replace_published(v1.clone());
        t.begin_modification(f);
        let v2 = FileEntry { block_ids: vec![BlockId(9)], ..v1.clone() };
        t.set_working(v2.clone());
        assert_eq!(t.published(f), Some(v1.clone()));
        assert_eq!(t.publish_view(1).cache.iter().find(|e| e.file_id == f), Some(&v1));
        t.take_retired();
        t.finish_modification(f);
        assert_eq!(t.published(f), Some(v2));
        assert_eq!(t.retired().entries, vec![v1]);
    }

    #[test]
    fn hidden_file_is_not_published() {
        let mut t = Filetable::new(params(8, 8)).unwrap();
        let f = t.create(false).unwrap();
        t.hide_until_synced(f);
        assert!(t.published(f).is_none());
        assert!(t.publish_view(0).cache.iter().all(|e| e.file_id != f));
        let sb = t.publish_view(0);
        assert!(matches!(lookup_published(&sb, f, |_, _| Ok(vec![])), Err(Error::NotFound(_))));
    }

    #[test]
    fn leaf_round_trip_through_superblock() {
        let mut t = Filetable::new(params(4, 2)).unwrap();
        for _ in 0..5 {
            t.create(false).unwrap();
        }
        let dirty = t.take_dirty_leaves();
        let mut leaves = HashMap::new();
        for (n, slot) in dirty.into_iter().enumerate() {
            let (payload, members) = t.materialize_leaf(slot).unwrap();
            let block = BlockId(100 + n as u64);
            leaves.insert(block, parse_leaf_payload(&payload).unwrap());
            t.leaf_placed(slot, block, &members);
        }
        let sb = t.publish_view(3);
        let mut leaf_reads = 0;
        for f in 0..6 {
            let e = lookup_published(&sb, f, |_, b| {
                leaf_reads += 1;
                Ok(leaves[&b].clone())
            })
            .unwrap();
            assert_eq!(e.file_id, f);
        }
        assert!(leaf_reads <= 6);
        let back = Filetable::from_superblock(&sb, |_, b| Ok(leaves[&b].clone())).unwrap();
        assert_eq!(back.working, t.working);
    }

    #[test]
    fn table_full_when_root_exhausted() {
        let p = FsParams { leaf_capacity: 1, cache_capacity: 1000, ..FsParams::new(512, 8, 3, 1000) };
        let mut t = Filetable::new(p).unwrap();
        let max = p.max_files();
        let mut made = 1;
        loop {
            match t.create(false) {
                Ok(_) => made += 1,
                Err(Error::TableFull) => break,
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!(made, max);
    }

    #[test]
    fn path_resolution() {
        let dirs: HashMap<u64, Vec<DirEntry>> = [
            (0, vec![DirEntry::new("docs", 1)]),
            (1, vec![DirEntry::new("a.txt", 2)]),
        ]
        .into_iter()
        .collect();
        let read = |id: u64| dirs.get(&id).cloned().ok_or_else(|| Error::NotADirectory(id.to_string()));
        assert_eq!(resolve_path("/", read).unwrap(), 0);
        assert_eq!(resolve_path("/docs/a.txt", read).unwrap(), 2);
        assert!(matches!(resolve_path("/docs/b", read), Err(Error::NotFound(_))));
        assert!(matches!(resolve_path("/docs/a.txt/x", read), Err(Error::NotADirectory(_))));
        assert!(resolve_path("relative", read).is_err());
    }
}
