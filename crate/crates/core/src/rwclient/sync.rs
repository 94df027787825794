//! The epoch sync: choose pairs, classify, re-pack, commit.

use std::collections::{BTreeSet, HashSet};
use std::time::Instant;

use rand::seq::index::sample;

use super::buffer::FragmentKey;
use super::RwClient;
use crate::backend::FlushRecord;
use crate::clock::Clock;
use crate::codec::{encode_pair, Block, BlockId, FileEntry, FullBlock, Geometry, SplitBlock, SplitFragment, LEAF_FILE_ID};
use crate::error::{Error, Result};
use crate::fstable::{Filetable, Retired, Shadow};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SyncReport {
    /// Epoch number of the superblock this sync staged.
    pub epoch: u64,
    pub pairs_chosen: Vec<u32>,
    /// Buffered fragments (leaves included) written into chosen pairs.
    pub fragments_cleared: usize,
    pub bytes_cleared: usize,
    pub buffer_bytes_remaining: usize,
    pub buffer_fragments_remaining: usize,
    /// Files whose new version became visible to readers.
    pub files_published: Vec<u64>,
    /// Chosen blocks left empty after re-packing.
    pub empty_blocks: usize,
    /// Payload bytes resident in the chosen pairs after re-packing.
    pub resident_bytes: usize,
    pub overrun: bool,
}

/// One flush followed by one sync.
#[derive(Clone, Debug)]
pub struct Tick {
    pub time: f64,
    pub flush: Option<FlushRecord>,
    pub report: SyncReport,
}

/// A fragment found in a chosen pair and whether it is still referenced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Residency {
    pub block: BlockId,
    pub file_id: u64,
    /// Fragment index for full blocks (leaf slot for leaves); `None` for
    /// split-block entries.
    pub fragment_index: Option<u64>,
    pub len: usize,
    pub live: bool,
}

/// Liveness under the union rule: a fragment is live if the working entry,
/// the pinned published entry, or a version retired since the last sync
/// still points at it.
struct Liveness<'a> {
    table: &'a Filetable,
    protected: &'a Retired,
    geo: &'a Geometry,
}

impl Liveness<'_> {
    fn versions(&self, file_id: u64) -> impl Iterator<Item = &FileEntry> {
        let shadow = match self.table.shadow().get(&file_id) {
            Some(Shadow::Entry(e)) => Some(e),
            _ => None,
        };
        self.table
            .get(file_id)
            .into_iter()
            .chain(shadow)
            .chain(self.protected.entries.iter().filter(move |e| e.file_id == file_id))
    }

    fn full(&self, file_id: u64, index: u64, at: BlockId) -> bool {
        if file_id == LEAF_FILE_ID {
            return self.table.root().get(&(index as u32)) == Some(&at) || self.protected.leaves.contains(&at);
        }
        let i = index as usize;
        self.versions(file_id).any(|e| {
            e.block_ids.get(i) == Some(&at) && self.geo.is_full_stored(self.geo.fragment_len(e.size, i))
        })
    }

    fn small(&self, file_id: u64, pair: u32, len: usize) -> bool {
        self.versions(file_id).any(|e| match e.block_ids.last() {
            Some(id) => {
                let i = e.block_ids.len() - 1;
                let l = self.geo.fragment_len(e.size, i);
                !id.is_unallocated() && id.pair() == pair && l == len && !self.geo.is_full_stored(l)
            }
            None => false,
        })
    }
}

/// A chosen pair while it is being re-packed.
struct Work {
    pair: u32,
    blocks: [Block; 2],
    /// Files with a live small fragment in this pair; a second one would be
    /// indistinguishable from the first.
    small_files: HashSet<u64>,
}

enum Placed {
    Data { file_id: u64, index: u64, at: BlockId },
    Leaf { slot: u32, at: BlockId, members: Vec<u64> },
    LeafDropped { slot: u32 },
}

impl RwClient {
    /// Runs one sync with `k` freshly drawn pairs.
    pub fn sync_epoch(&mut self) -> Result<SyncReport> {
        let pairs = self.choose_pairs();
        self.sync_epoch_with_pairs(&pairs)
    }

    /// `k` distinct indices drawn uniformly from `1..N`.
    pub fn choose_pairs(&mut self) -> Vec<u32> {
        let n = self.params().pair_count as usize - 1;
        let k = self.config.drip_rate as usize;
        sample(&mut self.rng, n, k).into_iter().map(|i| i as u32 + 1).collect()
    }

    /// Runs one sync on the given pairs instead of random ones.
    pub fn sync_epoch_with_pairs(&mut self, pairs: &[u32]) -> Result<SyncReport> {
        let started = Instant::now();
        let distinct: BTreeSet<u32> = pairs.iter().copied().collect();
        if distinct.len() != pairs.len() || pairs.iter().any(|&p| p == 0 || u64::from(p) >= self.params().pair_count) {
            return Err(Error::BadParams(format!("invalid pair choice {pairs:?}")));
        }
        self.queue_dirty_leaves();
        let protected = self.table.take_retired();

        // Decrypt and drop stale fragments.
        let mut works = Vec::with_capacity(pairs.len());
        for &pair in pairs {
            let blocks = self.load_pair(pair)?;
            let live = Liveness { table: &self.table, protected: &protected, geo: &self.geo };
            works.push(repack(&self.geo, pair, blocks, &live));
        }

        // Drain the buffer in priority order into whatever fits.
        let mut placed = Vec::new();
        let mut cleared_bytes = 0;
        for key in self.buffer.drain_order() {
            match key {
                FragmentKey::Leaf { slot } => {
                    let members = self.table.leaf_members(slot);
                    if members.is_empty() {
                        placed.push((key, Placed::LeafDropped { slot }));
                        continue;
                    }
                    let (payload, members) = match self.table.materialize_leaf(slot) {
                        Ok(m) => m,
                        Err(e) => {
                            log::warn!("leaf {slot} cannot be written: {e}");
                            continue;
                        }
                    };
                    if let Some(at) = take_empty(&mut works, None) {
                        set_block(&mut works, at, Block::Full(FullBlock {
                            file_id: LEAF_FILE_ID,
                            fragment_index: u64::from(slot),
                            payload,
                        }));
                        cleared_bytes += self.geo.data_capacity();
                        placed.push((key, Placed::Leaf { slot, at, members }));
                    }
                }
                FragmentKey::Data { file_id, index } => {
                    let data = &self.buffer.get(&key).expect("key from drain order").data;
                    if let Some(at) = place_data(&self.geo, &mut works, file_id, index, data) {
                        cleared_bytes += data.len();
                        placed.push((key, Placed::Data { file_id, index, at }));
                    }
                }
            }
        }

        // Commit: data staged, then buffer entries removed, then the
        // filetable updated.
        for w in &works {
            let plain = encode_pair(&self.geo, &w.blocks[0], &w.blocks[1])?;
            self.backend.stage(w.pair, &plain)?;
        }
        for (key, _) in &placed {
            self.buffer.remove(key);
        }
        let mut touched = BTreeSet::new();
        let mut fragments_cleared = 0;
        for (_, p) in placed {
            match p {
                Placed::Data { file_id, index, at } => {
                    fragments_cleared += 1;
                    if let Some(mut entry) = self.table.get(file_id).cloned() {
                        if let Some(slot) = entry.block_ids.get_mut(index as usize) {
                            *slot = at;
                            self.table.set_working(entry);
                        }
                    }
                    touched.insert(file_id);
                }
                Placed::Leaf { slot, at, members } => {
                    fragments_cleared += 1;
                    self.table.leaf_placed(slot, at, &members);
                }
                Placed::LeafDropped { slot } => self.table.leaf_dropped(slot),
            }
        }
        let mut files_published = Vec::new();
        for file_id in touched {
            if !self.buffer.has_file(file_id) && self.table.is_shadowed(file_id) {
                self.table.finish_modification(file_id);
                files_published.push(file_id);
            }
        }
        self.queue_dirty_leaves();
        self.epoch += 1;
        let sb = self.table.publish_view(self.epoch);
        self.backend.stage(0, &sb.encode()?)?;

        let mut empty_blocks = 0;
        let mut resident_bytes = 0;
        for w in works {
            for b in &w.blocks {
                empty_blocks += usize::from(b.is_empty());
                resident_bytes += b.payload_bytes();
            }
            self.staged_pairs.insert(w.pair, w.blocks);
        }
        let elapsed = started.elapsed().as_secs_f64();
        let overrun = elapsed > self.config.drip_time_s;
        if overrun {
            self.overruns += 1;
            log::warn!("EPOCH_OVERRUN: sync {} took {elapsed:.3}s, epoch is {}s", self.epoch, self.config.drip_time_s);
        }
        Ok(SyncReport {
            epoch: self.epoch,
            pairs_chosen: pairs.to_vec(),
            fragments_cleared,
            bytes_cleared: cleared_bytes,
            buffer_bytes_remaining: self.buffer.bytes(),
            buffer_fragments_remaining: self.buffer.len(),
            files_published,
            empty_blocks,
            resident_bytes,
            overrun,
        })
    }

    /// Liveness of every fragment resident in `pairs`, as the next sync
    /// would judge it.
    pub fn classify_pairs(&self, pairs: &[u32]) -> Result<Vec<Residency>> {
        let live = Liveness { table: &self.table, protected: self.table.retired(), geo: &self.geo };
        let mut out = Vec::new();
        for &pair in pairs {
            let blocks = self.load_pair(pair)?;
            for (slot, block) in blocks.iter().enumerate() {
                let at = BlockId::new(pair, slot as u8);
                match block {
                    Block::Empty => {}
                    Block::Full(f) => out.push(Residency {
                        block: at,
                        file_id: f.file_id,
                        fragment_index: Some(f.fragment_index),
                        len: f.payload.len(),
                        live: live.full(f.file_id, f.fragment_index, at),
                    }),
                    Block::Split(s) => out.extend(s.fragments.iter().map(|f| Residency {
                        block: at,
                        file_id: f.file_id,
                        fragment_index: None,
                        len: f.data.len(),
                        live: live.small(f.file_id, pair, f.data.len()),
                    })),
                }
            }
        }
        Ok(out)
    }

    /// Newest plaintext of a pair: staged if not yet flushed, else on disk.
    pub(super) fn load_pair(&self, pair: u32) -> Result<[Block; 2]> {
        match self.staged_pairs.get(&pair) {
            Some(b) => Ok(b.clone()),
            None => self.backend.reader().read_pair(&self.geo, pair),
        }
    }

    /// Writes everything staged by the last sync to the backend.
    pub fn flush_staged(&mut self, virtual_time_s: f64, wall_time_s: f64) -> Result<FlushRecord> {
        let record = self.backend.flush(virtual_time_s, wall_time_s)?;
        self.staged_pairs.clear();
        Ok(record)
    }

    /// Writes at most `limit` staged files, simulating a crash part way
    /// through a flush. The client must be dropped afterwards.
    pub fn flush_staged_partially(&mut self, virtual_time_s: f64, wall_time_s: f64, limit: usize) -> Result<FlushRecord> {
        self.backend.flush_limited(virtual_time_s, wall_time_s, limit)
    }

    /// One scheduler tick at time `now`: flush the previous epoch's files,
    /// then compute and stage the next epoch.
    pub fn tick(&mut self, now: f64, wall_time_s: f64) -> Result<Tick> {
        self.now = now;
        let flush = if self.backend.staged_indices().is_empty() {
            None
        } else {
            Some(self.flush_staged(now, wall_time_s)?)
        };
        let report = self.sync_epoch()?;
        Ok(Tick { time: now, flush, report })
    }

    /// Ticks every `t` seconds on `clock` until `until` is satisfied. The
    /// first tick fires one epoch after the first call.
    pub fn run_scheduler(&mut self, clock: &mut dyn Clock, until: RunUntil) -> Result<Vec<SyncReport>> {
        let t = self.config.drip_time_s;
        let mut reports = Vec::new();
        loop {
            let done = match until {
                RunUntil::Epochs(n) => reports.len() as u64 >= n,
                RunUntil::BufferEmpty { max_epochs } => {
                    (self.buffer.is_empty() && !self.table.has_dirty_leaves()) || reports.len() as u64 >= max_epochs
                }
            };
            if done {
                return Ok(reports);
            }
            let next = self.next_tick.unwrap_or_else(|| clock.now() + t);
            clock.wait_until(next);
            self.next_tick = Some(next + t);
            let tick = self.tick(next, clock.wall_seconds())?;
            reports.push(tick.report);
        }
    }

    /// Time of the next scheduled tick, once the scheduler has started.
    pub fn next_tick(&self) -> Option<f64> {
        self.next_tick
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunUntil {
    Epochs(u64),
    BufferEmpty { max_epochs: u64 },
}

/// Drops stale fragments and, where they fit, gathers a pair's live small
/// fragments into its first block.
fn repack(geo: &Geometry, pair: u32, blocks: [Block; 2], live: &Liveness) -> Work {
    let mut kept: [Block; 2] = [Block::Empty, Block::Empty];
    let mut smalls: [Vec<SplitFragment>; 2] = [Vec::new(), Vec::new()];
    for (slot, block) in blocks.into_iter().enumerate() {
        match block {
            Block::Empty => {}
            Block::Full(f) => {
                if live.full(f.file_id, f.fragment_index, BlockId::new(pair, slot as u8)) {
                    kept[slot] = Block::Full(f);
                }
            }
            Block::Split(s) => {
                smalls[slot] = s.fragments.into_iter().filter(|f| live.small(f.file_id, pair, f.data.len())).collect();
            }
        }
    }
    let small_files = smalls.iter().flatten().map(|f| f.file_id).collect();
    let together = SplitBlock { fragments: smalls.iter().flatten().cloned().collect() };
    let fits = together.used_bytes() <= geo.block_bytes();
    let blocks = match kept {
        [Block::Full(a), Block::Full(b)] => [Block::Full(a), Block::Full(b)],
        [Block::Full(a), Block::Empty] => [Block::Full(a), split_or_empty(together)],
        [Block::Empty, Block::Full(b)] => [split_or_empty(together), Block::Full(b)],
        _ if fits => [split_or_empty(together), Block::Empty],
        _ => {
            let [a, b] = smalls;
            [split_or_empty(SplitBlock { fragments: a }), split_or_empty(SplitBlock { fragments: b })]
        }
    };
    Work { pair, blocks, small_files }
}

fn split_or_empty(s: SplitBlock) -> Block {
    if s.fragments.is_empty() {
        Block::Empty
    } else {
        Block::Split(s)
    }
}

/// First empty chosen block, skipping pairs that hold a small fragment of
/// `exclude`.
fn take_empty(works: &mut [Work], exclude: Option<u64>) -> Option<BlockId> {
    works.iter().find_map(|w| {
        if exclude.is_some_and(|f| w.small_files.contains(&f)) {
            return None;
        }
        (0..2).find(|&s| w.blocks[s].is_empty()).map(|s| BlockId::new(w.pair, s as u8))
    })
}

fn set_block(works: &mut [Work], at: BlockId, block: Block) {
    let w = works.iter_mut().find(|w| w.pair == at.pair()).expect("block of a chosen pair");
    w.blocks[at.slot()] = block;
}

/// Places one buffered data fragment, returning where it went.
fn place_data(geo: &Geometry, works: &mut [Work], file_id: u64, index: u64, data: &[u8]) -> Option<BlockId> {
    if geo.is_full_stored(data.len()) {
        let at = take_empty(works, None)?;
        let mut payload = data.to_vec();
        payload.resize(geo.data_capacity(), 0);
        set_block(works, at, Block::Full(FullBlock { file_id, fragment_index: index, payload }));
        return Some(at);
    }
    let fragment = SplitFragment { file_id, data: data.to_vec() };
    for w in works.iter_mut() {
        if w.small_files.contains(&file_id) {
            continue;
        }
        for slot in 0..2 {
            if let Block::Split(s) = &mut w.blocks[slot] {
                if s.has_room(geo, data.len()) {
                    s.fragments.push(fragment);
                    w.small_files.insert(file_id);
                    return Some(BlockId::new(w.pair, slot as u8));
                }
            }
        }
    }
    let at = take_empty(works, Some(file_id))?;
    set_block(works, at, Block::Split(SplitBlock { fragments: vec![fragment] }));
    works.iter_mut().find(|w| w.pair == at.pair()).expect("chosen pair").small_files.insert(file_id);
    Some(at)
}
