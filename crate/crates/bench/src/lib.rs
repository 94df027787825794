//! Fixtures shared by the criterion benches.

use wosync_core::codec::FsParams;
use wosync_core::harness::workload::content;
use wosync_core::harness::Sim;
use wosync_core::Result;

/// A synced filesystem with `fill` of its `N * B` bytes in files of
/// `file_size` bytes, named `/f0`, `/f1`, ...
pub fn filled_sim(pair_bytes: u32, pair_count: u64, fill: f64, file_size: u64) -> Result<Sim> {
    let mut sim = Sim::new(FsParams::new(pair_bytes, pair_count, 3, 10_000), 1)?;
    let files = (fill * f64::from(pair_bytes) * pair_count as f64 / file_size as f64) as usize;
    for i in 0..files {
        sim.rw.put(&format!("/f{i}"), &content(i, file_size))?;
    }
    sim.drain(1_000_000)?;
    sim.flush()?;
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_fully_synced() {
        let sim = filled_sim(4096, 32, 0.3, 3000).unwrap();
        assert!(sim.rw.buffer().is_empty());
        assert_eq!(sim.rw.read_all("/f0").unwrap(), content(0, 3000));
    }
}
