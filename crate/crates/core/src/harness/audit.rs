//! Checks a backend trace for the observable regularity that makes traces
//! of different workloads look alike.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::backend::TraceEvent;
use crate::error::{Error, Result};

/// Shortest trace the auditor accepts.
pub const MIN_AUDIT_EPOCHS: usize = 100;

/// Significance level for the statistical checks.
pub const ALPHA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditConfig {
    pub pair_count: u64,
    pub drip_rate: u32,
    pub drip_time_s: f64,
}

impl AuditConfig {
    /// Guesses `k` and `t` from the trace itself: the most common write-set
    /// size minus the superblock, and the first gap between events.
    pub fn infer(trace: &[TraceEvent], pair_count: u64) -> Result<Self> {
        if trace.len() < 2 {
            return Err(Error::MalformedTrace("need at least two events to infer k and t".into()));
        }
        let mut sizes = std::collections::BTreeMap::new();
        for e in trace {
            *sizes.entry(e.indices.len()).or_insert(0usize) += 1;
        }
        let (&common, _) = sizes.iter().max_by_key(|&(_, c)| *c).expect("non-empty trace");
        Ok(AuditConfig {
            pair_count,
            drip_rate: common.saturating_sub(1) as u32,
            drip_time_s: trace[1].virtual_time_s - trace[0].virtual_time_s,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub epochs: usize,
    /// Events are exactly `t` apart with consecutive epoch numbers.
    pub cadence_ok: bool,
    /// Every event writes exactly `k + 1` distinct files.
    pub volume_ok: bool,
    /// Every event includes the superblock.
    pub superblock_ok: bool,
    /// Every event moves the same number of bytes.
    pub bytes_ok: bool,
    /// Chi-square p-value for uniform use of indices `1..N`.
    pub uniformity_p: f64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.cadence_ok && self.volume_ok && self.superblock_ok && self.bytes_ok && self.uniformity_p > ALPHA
    }

    pub fn summary(&self) -> String {
        let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
        format!(
            "epochs={} cadence={} volume={} superblock={} bytes={} uniformity_p={:.4} ({})",
            self.epochs,
            mark(self.cadence_ok),
            mark(self.volume_ok),
            mark(self.superblock_ok),
            mark(self.bytes_ok),
            self.uniformity_p,
            mark(self.uniformity_p > ALPHA),
        )
    }
}

pub fn audit_trace(trace: &[TraceEvent], config: &AuditConfig) -> Result<AuditReport> {
    if trace.len() < MIN_AUDIT_EPOCHS {
        return Err(Error::MalformedTrace(format!(
            "{} events; at least {MIN_AUDIT_EPOCHS} are needed",
            trace.len()
        )));
    }
    let n = config.pair_count;
    if let Some(e) = trace.iter().find(|e| e.indices.iter().any(|&i| u64::from(i) >= n)) {
        return Err(Error::MalformedTrace(format!("epoch {} writes an index outside 0..{n}", e.epoch_index)));
    }
    let tol = 1e-6 * config.drip_time_s.max(1.0);
    let cadence_ok = trace.windows(2).all(|w| {
        w[1].epoch_index == w[0].epoch_index + 1
            && ((w[1].virtual_time_s - w[0].virtual_time_s) - config.drip_time_s).abs() <= tol
    });
    let k = config.drip_rate as usize;
    let volume_ok = trace.iter().all(|e| {
        let mut idx = e.indices.clone();
        idx.sort_unstable();
        idx.dedup();
        idx.len() == k + 1 && e.indices.len() == k + 1
    });
    let superblock_ok = trace.iter().all(|e| e.indices.contains(&0));
    let bytes_ok = trace.iter().all(|e| e.total_bytes == trace[0].total_bytes);
    let counts = index_counts(trace, n);
    Ok(AuditReport {
        epochs: trace.len(),
        cadence_ok,
        volume_ok,
        superblock_ok,
        bytes_ok,
        uniformity_p: uniformity_p_value(&counts),
    })
}

/// How often each index in `1..N` was written.
pub fn index_counts(trace: &[TraceEvent], pair_count: u64) -> Vec<u64> {
    let mut counts = vec![0u64; pair_count.saturating_sub(1) as usize];
    for e in trace {
        for &i in &e.indices {
            if i != 0 && u64::from(i) < pair_count {
                counts[i as usize - 1] += 1;
            }
        }
    }
    counts
}

/// Goodness of fit of `counts` against the uniform distribution.
pub fn uniformity_p_value(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if counts.len() < 2 || total == 0 {
        return 1.0;
    }
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    chi_square_sf(stat, (counts.len() - 1) as f64)
}

/// Chi-square test of homogeneity: could both samples come from the same
/// distribution over indices?
pub fn two_sample_p_value(a: &[u64], b: &[u64]) -> f64 {
    assert_eq!(a.len(), b.len(), "samples over different index ranges");
    let (ta, tb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let total = ta + tb;
    if ta == 0.0 || tb == 0.0 {
        return 1.0;
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cells += 1;
        for (obs, row) in [(x as f64, ta), (y as f64, tb)] {
            let exp = row * col / total;
            stat += (obs - exp).powi(2) / exp;
        }
    }
    if cells < 2 {
        return 1.0;
    }
    chi_square_sf(stat, (cells - 1) as f64)
}

fn chi_square_sf(stat: f64, df: f64) -> f64 {
    ChiSquared::new(df).expect("positive degrees of freedom").sf(stat)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(i: u64, t: f64, indices: Vec<u32>, bytes: u64) -> TraceEvent {
        TraceEvent { epoch_index: i, virtual_time_s: t, wall_time_s: t, indices, total_bytes: bytes }
    }

    fn regular(m: u64) -> Vec<TraceEvent> {
        (0..m).map(|i| event(i, 10.0 * i as f64, vec![0, (i % 7 + 1) as u32, ((i + 3) % 7 + 1) as u32], 300)).collect()
    }

    fn cfg() -> AuditConfig {
        AuditConfig { pair_count: 8, drip_rate: 2, drip_time_s: 10.0 }
    }

    #[test]
    fn regular_trace_passes() {
        let r = audit_trace(&regular(140), &cfg()).unwrap();
        assert!(r.passed(), "{}", r.summary());
    }

    #[test]
    fn each_check_trips_on_its_own_defect() {
        let mut t = regular(140);
        t[50].indices = vec![0, 1, 2, 3, 4];
        let r = audit_trace(&t, &cfg()).unwrap();
        assert!(!r.volume_ok && r.cadence_ok && r.superblock_ok);

        let mut t = regular(140);
        t[60].virtual_time_s += 3.0;
        assert!(!audit_trace(&t, &cfg()).unwrap().cadence_ok);

        let mut t = regular(140);
        t[70].indices = vec![1, 2, 3];
        let r = audit_trace(&t, &cfg()).unwrap();
        assert!(!r.superblock_ok && r.volume_ok);

        let mut t = regular(140);
        t[80].total_bytes = 301;
        assert!(!audit_trace(&t, &cfg()).unwrap().bytes_ok);

        let t: Vec<_> = (0..140).map(|i| event(i, 10.0 * i as f64, vec![0, 1, 2], 300)).collect();
        assert!(audit_trace(&t, &cfg()).unwrap().uniformity_p < 1e-6);
    }

    #[test]
    fn short_or_out_of_range_traces_are_malformed() {
        assert!(matches!(audit_trace(&regular(10), &cfg()), Err(Error::MalformedTrace(_))));
        let mut t = regular(140);
        t[0].indices = vec![0, 9, 1];
        assert!(matches!(audit_trace(&t, &cfg()), Err(Error::MalformedTrace(_))));
    }

    #[test]
    fn chi_square_matches_known_quantiles() {
        // 95th percentile of chi-square with 3 df is 7.8147.
        assert!((chi_square_sf(7.8147, 3.0) - 0.05).abs() < 1e-4);
        // Counts [30, 10, 20, 20]: statistic 10 on 3 df.
        assert!((uniformity_p_value(&[30, 10, 20, 20]) - chi_square_sf(10.0, 3.0)).abs() < 1e-12);
    }

    #[test]
    fn two_sample_test_separates_different_distributions() {
        assert!(two_sample_p_value(&[100, 100, 100], &[98, 103, 99]) > 0.5);
        assert!(two_sample_p_value(&[300, 0, 0], &[0, 150, 150]) < 1e-6);
    }

    #[test]
    fn infers_k_and_t() {
        let c = AuditConfig::infer(&regular(5), 8).unwrap();
        assert_eq!((c.drip_rate, c.drip_time_s), (2, 10.0));
    }
}
