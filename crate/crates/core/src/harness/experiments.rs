//! Desk-scale versions of the throughput, latency, buffer and clearing-time
//! experiments. Everything runs on an in-memory backend and a virtual clock.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::propagation::{Delay, PropagationSim};
use super::workload::{content, lognormal_sizes, ThrashModel, OUTLIER_SHARE};
use crate::backend::MemStore;
use crate::codec::{Cipher, FsParams, KEY_LEN};
use crate::backend::TraceEvent;
use crate::error::{Error, Result};
use crate::roclient::{RoClient, Watch};
use crate::rwclient::{RwClient, Tick};

/// An RW client on an in-memory backend with its own virtual time.
pub struct Sim {
    pub rw: RwClient,
    pub store: Arc<MemStore>,
    pub cipher: Arc<Cipher>,
}

impl Sim {
    pub fn new(params: FsParams, seed: u64) -> Result<Self> {
        let store = Arc::new(MemStore::new(params.pair_count as u32));
        let cipher = Arc::new(Cipher::seeded(&[0x5A; KEY_LEN], seed));
        let rw = RwClient::init(store.clone(), cipher.clone(), params, Some(seed))?;
        Ok(Sim { rw, store, cipher })
    }

    /// Mounts a copy of a backend captured with [`MemStore::snapshot`].
    pub fn from_snapshot(files: Vec<Vec<u8>>, seed: u64) -> Result<Self> {
        let store = Arc::new(MemStore::from_snapshot(files));
        let cipher = Arc::new(Cipher::seeded(&[0x5A; KEY_LEN], seed));
        let rw = RwClient::mount(store.clone(), cipher.clone(), Some(seed))?;
        Ok(Sim { rw, store, cipher })
    }

    pub fn params(&self) -> FsParams {
        *self.rw.params()
    }

    /// Advances one epoch and ticks.
    pub fn step(&mut self) -> Result<Tick> {
        let now = self.rw.now() + self.rw.config().drip_time_s;
        self.rw.tick(now, now)
    }

    /// Writes out whatever the last sync staged.
    pub fn flush(&mut self) -> Result<()> {
        if !self.rw.backend().staged_indices().is_empty() {
            let now = self.rw.now() + self.rw.config().drip_time_s;
            self.rw.set_now(now);
            self.rw.flush_staged(now, now)?;
        }
        Ok(())
    }

    /// Ticks until nothing is pending, then flushes. Returns the syncs run.
    pub fn drain(&mut self, max_epochs: u64) -> Result<u64> {
        let mut n = 0;
        while n == 0 || !self.rw.buffer().is_empty() || self.rw.table().has_dirty_leaves() {
            if n >= max_epochs {
                return Err(Error::BadParams(format!("buffer not drained after {max_epochs} epochs")));
            }
            self.step()?;
            n += 1;
        }
        self.flush()?;
        Ok(n)
    }

    /// Stores `sizes` as `/{prefix}{i}` and syncs them with a temporarily
    /// raised drip rate. The trace of this setup phase is discarded.
    pub fn prefill(&mut self, sizes: &[u64], prefix: &str, fast_k: u32) -> Result<()> {
        for (i, &s) in sizes.iter().enumerate() {
            self.rw.put(&format!("/{prefix}{i}"), &content(i + 1_000_000, s))?;
        }
        let k = self.rw.config().drip_rate;
        let n = self.params().pair_count;
        self.rw.set_drip_rate(fast_k.min((n - 1) as u32))?;
        let drained = self.drain(100_000);
        self.rw.set_drip_rate(k)?;
        drained?;
        self.rw.backend_mut().clear_trace();
        Ok(())
    }

    /// Bytes of live data in the backend: file contents plus one block per
    /// filetable leaf.
    pub fn live_bytes(&self) -> u64 {
        let table = self.rw.table();
        let files: u64 = table.entries().map(|e| e.size).sum();
        files + (table.root().len() * table.geometry().data_capacity()) as u64
    }

    /// Whether any fragment buffered at or before `t` is still waiting.
    pub fn holds_fragments_from(&self, t: f64) -> bool {
        let buf = self.rw.buffer();
        buf.drain_order().iter().any(|k| buf.get(k).is_some_and(|f| f.enqueued_at <= t))
    }
}

// ---- clearing time ----

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SizeModel {
    Fixed(u64),
    Lognormal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem1Config {
    pub pair_bytes: u32,
    pub pair_count: u64,
    pub drip_rate: u32,
    /// Target `(m + s) / NB`.
    pub load_fraction: f64,
    /// Target `s`, bytes inserted at once.
    pub buffer_bytes: u64,
    pub size_model: SizeModel,
    pub trials: usize,
    /// Distinct prefilled backends the trials are spread over.
    pub prefills: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailCheck {
    pub r: f64,
    /// Fraction of trials needing more than `48s/(Bk) + 18r` syncs.
    pub exceed_rate: f64,
    /// `exp(-r)`.
    pub limit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem1Result {
    pub syncs: Vec<u64>,
    pub s_bytes: Vec<u64>,
    pub m_bytes: Vec<u64>,
    pub mean_syncs: f64,
    /// `4 s / (B k)` with `s` averaged over trials.
    pub bound: f64,
    /// Largest `(m + s) / NB` seen in any trial.
    pub max_load: f64,
    pub tails: Vec<TailCheck>,
}

impl Theorem1Result {
    pub fn holds(&self) -> bool {
        self.mean_syncs <= self.bound && self.tails.iter().all(|t| t.exceed_rate <= t.limit)
    }
}

fn workload_sizes(model: SizeModel, rng: &mut ChaCha20Rng, total: u64, max_file: u64) -> Vec<u64> {
    match model {
        SizeModel::Fixed(size) => {
            let mut sizes = vec![size; (total / size) as usize];
            let rest = total % size;
            if rest > 0 {
                sizes.push(rest);
            }
            sizes
        }
        SizeModel::Lognormal => lognormal_sizes(rng, total, None, max_file),
    }
}

/// Monte Carlo over sync operations until an `s`-byte burst of writes is
/// fully cleared from the buffer.
pub fn validate_theorem1(cfg: &Theorem1Config) -> Result<Theorem1Result> {
    let params = FsParams::new(cfg.pair_bytes, cfg.pair_count, cfg.drip_rate, 10_000);
    let nb = cfg.pair_bytes as f64 * cfg.pair_count as f64;
    let bk = cfg.pair_bytes as f64 * cfg.drip_rate as f64;
    let max_file = u64::from(cfg.pair_bytes) * 8;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let m_target = (cfg.load_fraction * nb) as u64 - cfg.buffer_bytes.min((cfg.load_fraction * nb) as u64);
    let prefills = cfg.prefills.max(1);
    let mut snapshots = Vec::with_capacity(prefills);
    for p in 0..prefills {
        let mut sim = Sim::new(params, cfg.seed ^ (p as u64 + 1))?;
        let sizes = lognormal_sizes(&mut rng, m_target, None, max_file);
        sim.prefill(&sizes, "m", cfg.pair_count as u32 / 4)?;
        snapshots.push(sim.store.snapshot());
    }
    let (mut syncs, mut s_bytes, mut m_bytes) = (Vec::new(), Vec::new(), Vec::new());
    let mut max_load: f64 = 0.0;
    for trial in 0..cfg.trials {
        let mut sim = Sim::from_snapshot(snapshots[trial % prefills].clone(), rng.random())?;
        let m = sim.live_bytes();
        for (i, s) in workload_sizes(cfg.size_model, &mut rng, cfg.buffer_bytes, max_file).into_iter().enumerate() {
            sim.rw.put(&format!("/s{i}"), &content(i, s))?;
        }
        let s = sim.rw.buffer().bytes() as u64;
        let start = sim.rw.now();
        let cap = (48.0 * s as f64 / bk + 18.0 * 20.0) as u64;
        let mut n = 0;
        while sim.holds_fragments_from(start) {
            if n > cap {
                return Err(Error::BadParams(format!("trial {trial} still not clear after {n} syncs")));
            }
            sim.step()?;
            n += 1;
        }
        max_load = max_load.max((m + s) as f64 / nb);
        syncs.push(n);
        s_bytes.push(s);
        m_bytes.push(m);
    }
    let trials = cfg.trials.max(1) as f64;
    let mean_syncs = syncs.iter().sum::<u64>() as f64 / trials;
    let mean_s = s_bytes.iter().sum::<u64>() as f64 / trials;
    let tails = [1.0, 2.0, 3.0]
        .into_iter()
        .map(|r| {
            let exceed = syncs
                .iter()
                .zip(&s_bytes)
                .filter(|&(&n, &s)| n as f64 > 48.0 * s as f64 / bk + 18.0 * r)
                .count();
            TailCheck { r, exceed_rate: exceed as f64 / trials, limit: (-r).exp() }
        })
        .collect();
    Ok(Theorem1Result { syncs, s_bytes, m_bytes, mean_syncs, bound: 4.0 * mean_s / bk, max_load, tails })
}

// ---- throughput ----

#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputConfig {
    pub pair_bytes: u32,
    pub pair_count: u64,
    pub drip_rate: u32,
    pub sizes: Vec<u64>,
    pub seed: u64,
    pub max_epochs: u64,
}

impl ThroughputConfig {
    /// `count` files that each fill exactly two full blocks.
    pub fn pair_sized(pair_bytes: u32, pair_count: u64, drip_rate: u32, count: usize, seed: u64) -> Result<Self> {
        let cap = FsParams::new(pair_bytes, pair_count, drip_rate, 10_000).geometry()?.data_capacity() as u64;
        Ok(ThroughputConfig { pair_bytes, pair_count, drip_rate, sizes: vec![2 * cap; count], seed, max_epochs: 200_000 })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputRow {
    pub epoch: u64,
    pub files_synced: usize,
    pub bytes_synced: u64,
    /// Backend bytes written by the flushes that made these files visible.
    pub backend_bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputResult {
    pub rows: Vec<ThroughputRow>,
    pub total_files: usize,
    pub payload_bytes: u64,
    /// Sync number after which each file was published.
    pub visible_epoch: Vec<u64>,
}

impl ThroughputResult {
    pub fn epochs_to_complete(&self) -> u64 {
        self.visible_epoch.iter().copied().max().unwrap_or(0)
    }

    /// First row with at least `fraction` of the files visible.
    pub fn row_at_files(&self, fraction: f64) -> Option<&ThroughputRow> {
        let need = (fraction * self.total_files as f64).ceil() as usize;
        self.rows.iter().find(|r| r.files_synced >= need)
    }

    /// First row with at least `fraction` of the payload bytes visible.
    pub fn row_at_bytes(&self, fraction: f64) -> Option<&ThroughputRow> {
        let need = (fraction * self.payload_bytes as f64).ceil() as u64;
        self.rows.iter().find(|r| r.bytes_synced >= need)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,files_synced,fraction_files,bytes_synced,fraction_bytes,backend_bytes\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{},{:.6},{}\n",
                r.epoch,
                r.files_synced,
                r.files_synced as f64 / self.total_files as f64,
                r.bytes_synced,
                r.bytes_synced as f64 / self.payload_bytes as f64,
                r.backend_bytes
            ));
        }
        out
    }
}

/// Inserts every file at once and records when each becomes visible.
pub fn bench_throughput(cfg: &ThroughputConfig) -> Result<ThroughputResult> {
    let params = FsParams::new(cfg.pair_bytes, cfg.pair_count, cfg.drip_rate, 10_000);
    let mut sim = Sim::new(params, cfg.seed)?;
    let mut ids = HashMap::new();
    for (i, &s) in cfg.sizes.iter().enumerate() {
        ids.insert(sim.rw.put(&format!("/f{i}"), &content(i, s))?, i);
    }
    let mut visible = vec![None; cfg.sizes.len()];
    let mut rows = Vec::new();
    let (mut files, mut bytes, mut backend) = (0, 0, 0);
    let mut epoch = 0;
    let mut pending_rows = Vec::new();
    while files < cfg.sizes.len() {
        if epoch >= cfg.max_epochs {
            return Err(Error::BadParams(format!("throughput run not done after {epoch} epochs")));
        }
        let tick = sim.step()?;
        epoch += 1;
        if let Some(f) = &tick.flush {
            backend += f.event.total_bytes;
        }
        // What sync e publishes reaches the backend with the next flush.
        for (e, f, b) in pending_rows.drain(..) {
            rows.push(ThroughputRow { epoch: e, files_synced: f, bytes_synced: b, backend_bytes: backend });
        }
        for id in &tick.report.files_published {
            if let Some(&i) = ids.get(id) {
                if visible[i].is_none() {
                    visible[i] = Some(epoch);
                    files += 1;
                    bytes += cfg.sizes[i];
                }
            }
        }
        pending_rows.push((epoch, files, bytes));
    }
    let last = sim.step()?;
    backend += last.flush.map_or(0, |f| f.event.total_bytes);
    for (e, f, b) in pending_rows {
        rows.push(ThroughputRow { epoch: e, files_synced: f, bytes_synced: b, backend_bytes: backend });
    }
    Ok(ThroughputResult {
        rows,
        total_files: cfg.sizes.len(),
        payload_bytes: cfg.sizes.iter().sum(),
        visible_epoch: visible.into_iter().map(|v| v.expect("all visible")).collect(),
    })
}

/// Equal-total-bytes workloads for the size-independence comparison:
/// pair-sized files, and lognormal files led by one large outlier.
pub fn size_independence_sets(pair_bytes: u32, pair_count: u64, fraction: f64, seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    let geo = FsParams::new(pair_bytes, pair_count, 3, 10_000).geometry()?;
    let file = 2 * geo.data_capacity() as u64;
    let count = (fraction * pair_count as f64 * pair_bytes as f64 / file as f64).round() as usize;
    let total = file * count as u64;
    let outlier = (OUTLIER_SHARE * pair_count as f64 * pair_bytes as f64) as u64;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let variable = lognormal_sizes(&mut rng, total, Some(outlier.min(total / 2)), 8 * u64::from(pair_bytes));
    Ok((vec![file; count], variable))
}

// ---- latency ----

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyConfig {
    pub pair_bytes: u32,
    pub pair_count: u64,
    pub drip_rate: u32,
    pub file_size: u64,
    /// Stop once this fraction of `N * B` holds file data.
    pub max_fill: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyRow {
    /// Fill before the file was written.
    pub fill: f64,
    pub epochs: u64,
}

/// Writes one file, waits until it is visible, repeats.
pub fn bench_latency(cfg: &LatencyConfig) -> Result<Vec<LatencyRow>> {
    let params = FsParams::new(cfg.pair_bytes, cfg.pair_count, cfg.drip_rate, 10_000);
    let mut sim = Sim::new(params, cfg.seed)?;
    let nb = cfg.pair_bytes as f64 * cfg.pair_count as f64;
    let mut rows = Vec::new();
    let mut stored = 0u64;
    let mut i = 0;
    while (stored as f64) / nb < cfg.max_fill {
        let id = sim.rw.put(&format!("/f{i}"), &content(i, cfg.file_size))?;
        let mut epochs = 0;
        loop {
            let tick = sim.step()?;
            epochs += 1;
            if tick.report.files_published.contains(&id) {
                break;
            }
            if epochs > 100_000 {
                return Err(Error::BadParams("file never became visible".into()));
            }
        }
        rows.push(LatencyRow { fill: stored as f64 / nb, epochs });
        stored += cfg.file_size;
        i += 1;
    }
    Ok(rows)
}

/// Median epochs for rows with fill in `[lo, hi)`.
pub fn median_latency(rows: &[LatencyRow], lo: f64, hi: f64) -> Option<f64> {
    let mut v: Vec<u64> = rows.iter().filter(|r| r.fill >= lo && r.fill < hi).map(|r| r.epochs).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] as f64 } else { (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0 })
}

// ---- buffer size under thrashing ----

#[derive(Clone, Debug, PartialEq)]
pub struct BufferConfig {
    pub pair_bytes: u32,
    pub pair_count: u64,
    pub drip_rate: u32,
    pub fill: f64,
    pub epochs: u64,
    /// Mean bytes rewritten per batch.
    pub batch_bytes: u64,
    /// Epochs between batches.
    pub batch_every: u64,
    /// Largest file the workload generates.
    pub max_file: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BufferResult {
    /// Buffered bytes after each sync.
    pub samples: Vec<u64>,
    /// Buffered bytes just before each sync, after that epoch's batch.
    pub peaks: Vec<u64>,
    pub block_bytes: u64,
}

impl BufferResult {
    pub fn max(&self) -> u64 {
        self.samples.iter().copied().max().unwrap_or(0)
    }

    pub fn max_in_blocks(&self) -> f64 {
        self.max() as f64 / self.block_bytes as f64
    }

    pub fn peak_in_blocks(&self) -> f64 {
        self.peaks.iter().copied().max().unwrap_or(0) as f64 / self.block_bytes as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,buffer_bytes_before_sync,buffer_bytes_after_sync\n");
        for (i, (p, s)) in self.peaks.iter().zip(&self.samples).enumerate() {
            out.push_str(&format!("{},{p},{s}\n", i + 1));
        }
        out
    }

    /// Fraction of samples strictly above `bytes`.
    pub fn exceed_fraction(&self, bytes: u64) -> f64 {
        self.samples.iter().filter(|&&s| s > bytes).count() as f64 / self.samples.len().max(1) as f64
    }
}

/// Fills the backend with lognormal files, then rewrites a batch of them
/// every `batch_every` epochs and samples the buffer after each sync.
pub fn bench_buffer(cfg: &BufferConfig) -> Result<BufferResult> {
    let params = FsParams::new(cfg.pair_bytes, cfg.pair_count, cfg.drip_rate, 10_000);
    let mut sim = Sim::new(params, cfg.seed)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let nb = cfg.pair_bytes as f64 * cfg.pair_count as f64;
    let sizes = lognormal_sizes(&mut rng, (cfg.fill * nb) as u64, None, cfg.max_file);
    sim.prefill(&sizes, "f", cfg.pair_count as u32 / 4)?;
    let model = ThrashModel::new(&sizes, cfg.batch_bytes);
    let mut samples = Vec::with_capacity(cfg.epochs as usize);
    let mut peaks = Vec::with_capacity(cfg.epochs as usize);
    let mut version = 0;
    for epoch in 0..cfg.epochs {
        let batch = if epoch % cfg.batch_every.max(1) == 0 { model.batch(&mut rng) } else { Vec::new() };
        for i in batch {
            version += 1;
            sim.rw.put(&format!("/f{i}"), &content(version * 7919 + i, sizes[i]))?;
        }
        peaks.push(sim.rw.buffer().bytes() as u64);
        samples.push(sim.step()?.report.buffer_bytes_remaining as u64);
    }
    Ok(BufferResult { samples, peaks, block_bytes: u64::from(cfg.pair_bytes / 2) })
}

// ---- propagation ----

#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityConfig {
    pub pair_bytes: u32,
    pub pair_count: u64,
    pub drip_rate: u32,
    pub drip_time_s: f64,
    pub delay: Delay,
    pub files: usize,
    pub file_size: u64,
    /// Seconds between successive file writes.
    pub write_interval_s: f64,
    /// Resolution at which readers poll.
    pub poll_step_s: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityRow {
    pub path: String,
    pub written_at: f64,
    /// First time a reader on the writer's own backend could read the file.
    pub local: f64,
    /// First time a reader on the replica could read it.
    pub remote: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityResult {
    pub rows: Vec<VisibilityRow>,
    pub trace: Vec<TraceEvent>,
}

impl VisibilityResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,written_at_s,local_visible_s,remote_visible_s\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.path, r.written_at, r.local, r.remote));
        }
        out
    }
}

/// Writes files one at a time while a replica receives every flushed
/// backend file after `delay`, and records when each file becomes readable
/// on both sides.
pub fn visibility_lag(cfg: &VisibilityConfig) -> Result<VisibilityResult> {
    let params = FsParams::new(cfg.pair_bytes, cfg.pair_count, cfg.drip_rate, (cfg.drip_time_s * 1000.0).round() as u64);
    let mut sim = Sim::new(params, cfg.seed)?;
    let replica = Arc::new(MemStore::new(cfg.pair_count as u32));
    let mut prop = PropagationSim::new(cfg.seed);
    prop.add_replica(sim.store.as_ref(), replica.clone(), cfg.delay)?;
    let mut local = RoClient::mount(sim.store.clone(), sim.cipher.clone())?.with_ttl(0.0);
    let mut remote = RoClient::mount(replica, sim.cipher.clone())?.with_ttl(0.0);
    let (mut local_watch, mut remote_watch) = (Watch::new("/**")?, Watch::new("/**")?);

    let mut written: HashMap<String, f64> = HashMap::new();
    let mut local_seen: HashMap<String, f64> = HashMap::new();
    let mut rows = Vec::new();
    let step = cfg.poll_step_s;
    let horizon = cfg.files as f64 * cfg.write_interval_s + 1000.0 * cfg.drip_time_s;
    let mut next_tick = cfg.drip_time_s;
    let mut next_write = 0.0;
    let mut i = 0;
    let mut now: f64 = 0.0;
    while rows.len() < cfg.files {
        if now > horizon {
            return Err(Error::BadParams(format!("only {} of {} files visible after {now}s", rows.len(), cfg.files)));
        }
        if i < cfg.files && now + 1e-9 >= next_write {
            let path = format!("/v{i:04}");
            sim.rw.set_now(now);
            sim.rw.put(&path, &content(i, cfg.file_size))?;
            written.insert(path, now);
            i += 1;
            next_write += cfg.write_interval_s;
        }
        if now + 1e-9 >= next_tick {
            let tick = sim.rw.tick(next_tick, next_tick)?;
            if let Some(record) = &tick.flush {
                prop.on_flush(record, next_tick);
            }
            next_tick += cfg.drip_time_s;
        }
        prop.propagate(now)?;
        for v in local_watch.poll(&mut local, now)? {
            local_seen.insert(v.path, now);
        }
        for v in remote_watch.poll(&mut remote, now)? {
            let local_at = *local_seen.get(&v.path).unwrap_or(&now);
            rows.push(VisibilityRow { written_at: written[&v.path], local: local_at, remote: now, path: v.path });
        }
        now = ((now / step).round() + 1.0) * step;
    }
    rows.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(VisibilityResult { rows, trace: sim.rw.trace().to_vec() })
}
