//! Timestamped sequences of non-read operations, replayed against a
//! read/write client on a virtual clock.

use crate::backend::TraceEvent;
use crate::error::Result;
use crate::rwclient::RwClient;

#[derive(Clone, Debug, PartialEq)]
pub enum ScriptOp {
    Create(String),
    Mkdir(String),
    Put(String, Vec<u8>),
    /// `(path, block offset, bytes)`; the offset counts fragments.
    Write(String, u64, Vec<u8>),
    Resize(String, u64),
    Delete(String),
}

impl ScriptOp {
    /// Bytes this operation may modify, counting file data only.
    pub fn bytes(&self) -> u64 {
        match self {
            ScriptOp::Put(_, d) | ScriptOp::Write(_, _, d) => d.len() as u64,
            ScriptOp::Resize(_, n) => *n,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FsequenceScript {
    /// `(time in seconds, operation)`, sorted by time.
    pub ops: Vec<(f64, ScriptOp)>,
}

impl FsequenceScript {
    pub fn new(mut ops: Vec<(f64, ScriptOp)>) -> Self {
        ops.sort_by(|a, b| a.0.total_cmp(&b.0));
        FsequenceScript { ops }
    }

    /// `L`: total bytes modified.
    pub fn total_bytes(&self) -> u64 {
        self.ops.iter().map(|(_, op)| op.bytes()).sum()
    }

    /// `t`: time of the last operation.
    pub fn last_time(&self) -> f64 {
        self.ops.last().map_or(0.0, |(t, _)| *t)
    }

    pub fn is_within(&self, l: u64, t: f64) -> bool {
        self.total_bytes() <= l && self.last_time() <= t
    }

    /// The three example sequences: nothing; two writes at time 3 and one at
    /// time 5; a single write at time 5. Each is a (20, 5)-sequence over the
    /// files `/file1` and `/file2`.
    pub fn examples() -> [FsequenceScript; 3] {
        let w = |t: f64, f: &str, off: u64, len: usize| (t, ScriptOp::Write(f.into(), off, vec![0xA5; len]));
        [
            FsequenceScript::default(),
            FsequenceScript::new(vec![w(3.0, "/file1", 1, 5), w(3.0, "/file2", 3, 3), w(5.0, "/file1", 6, 9)]),
            FsequenceScript::new(vec![w(5.0, "/file2", 1, 20)]),
        ]
    }

    /// A random sequence over `files` of at most `l` bytes ending by `t`.
    pub fn random(rng: &mut impl rand::Rng, files: &[&str], fragments: u64, l: u64, t: f64) -> Self {
        let mut ops = Vec::new();
        let mut budget = l;
        while budget > 0 && rng.random_bool(0.8) {
            let len = rng.random_range(1..=budget);
            budget -= len;
            let file = files[rng.random_range(0..files.len())];
            let off = rng.random_range(0..fragments);
            ops.push((rng.random_range(0.0..=t), ScriptOp::Write(file.into(), off, vec![rng.random(); len as usize])));
        }
        FsequenceScript::new(ops)
    }
}

/// Applies one operation. Block offsets are converted to byte offsets.
pub fn apply_op(rw: &mut RwClient, op: &ScriptOp) -> Result<()> {
    let cap = rw.geometry().data_capacity() as u64;
    match op {
        ScriptOp::Create(p) => rw.create(p).map(|_| ()),
        ScriptOp::Mkdir(p) => rw.mkdir(p).map(|_| ()),
        ScriptOp::Put(p, d) => rw.put(p, d).map(|_| ()),
        ScriptOp::Write(p, off, d) => rw.write(p, off * cap, d),
        ScriptOp::Resize(p, n) => rw.resize(p, *n),
        ScriptOp::Delete(p) => rw.delete(p),
    }
}

/// Runs `script` starting at virtual time `start`, ticking every `t` for
/// `epochs` epochs, and returns the trace events produced meanwhile.
/// Operations fire before any tick at the same instant.
pub fn run_script(rw: &mut RwClient, script: &FsequenceScript, start: f64, epochs: u64) -> Result<Vec<TraceEvent>> {
    let t = rw.config().drip_time_s;
    let first = rw.trace().len();
    let mut ops = script.ops.iter().peekable();
    for e in 1..=epochs {
        let tick_at = start + t * e as f64;
        while let Some((at, op)) = ops.next_if(|(at, _)| start + at <= tick_at) {
            rw.set_now(start + at);
            apply_op(rw, op)?;
        }
        rw.tick(tick_at, tick_at)?;
    }
    Ok(rw.trace()[first..].to_vec())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn examples_are_20_5_sequences() {
        for s in FsequenceScript::examples() {
            assert!(s.is_within(20, 5.0));
        }
        assert_eq!(FsequenceScript::examples()[1].total_bytes(), 17);
    }

    #[test]
    fn random_scripts_respect_their_bounds() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = FsequenceScript::random(&mut rng, &["/a", "/b"], 4, 500, 40.0);
            assert!(s.is_within(500, 40.0));
        }
    }
}
