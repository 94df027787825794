//! Synthetic file sets and write patterns.

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, LogNormal};

/// Median file size of the variable-size model, in bytes.
pub const LOGNORMAL_MEDIAN: f64 = 4096.0;
/// Shape of the variable-size model; gives a mean near 30 KB.
pub const LOGNORMAL_SIGMA: f64 = 2.0;
/// Share of the backend taken by the one very large file.
pub const OUTLIER_SHARE: f64 = 0.14;

pub fn lognormal() -> LogNormal<f64> {
    LogNormal::new(LOGNORMAL_MEDIAN.ln(), LOGNORMAL_SIGMA).expect("valid lognormal")
}

/// `count` files of exactly `size` bytes.
pub fn fixed_sizes(count: usize, size: u64) -> Vec<u64> {
    vec![size; count]
}

/// Lognormal file sizes (each at most `max_file`) summing to exactly
/// `total` bytes, led by one `outlier`-byte file when given.
pub fn lognormal_sizes(rng: &mut impl Rng, total: u64, outlier: Option<u64>, max_file: u64) -> Vec<u64> {
    let dist = lognormal();
    let mut sizes = Vec::new();
    let mut left = total;
    if let Some(o) = outlier.filter(|&o| o > 0) {
        let o = o.min(left);
        sizes.push(o);
        left -= o;
    }
    while left > 0 {
        let s = (dist.sample(rng).round() as u64).clamp(1, max_file).min(left);
        sizes.push(s);
        left -= s;
    }
    sizes
}

/// Deterministic content for file `n` of a workload.
pub fn content(n: usize, size: u64) -> Vec<u8> {
    let mut state = (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..size)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state as u8
        })
        .collect()
}

/// Picks files to rewrite. Smaller files are preferred: a file's weight is
/// inversely proportional to the square root of its size.
pub struct ThrashModel {
    weights: WeightedIndex<f64>,
    sizes: Vec<u64>,
    /// Mean bytes rewritten per batch.
    pub batch_bytes: u64,
}

impl ThrashModel {
    pub fn new(sizes: &[u64], batch_bytes: u64) -> Self {
        let weights = WeightedIndex::new(sizes.iter().map(|&s| 1.0 / (s.max(1) as f64).sqrt()))
            .expect("at least one file");
        ThrashModel { weights, sizes: sizes.to_vec(), batch_bytes }
    }

    /// File indices to rewrite in one batch. Files are added while the batch
    /// stays under its target, which is drawn uniformly from
    /// `[0, 2 * batch_bytes]`; the first pick is always taken, so a batch
    /// may exceed the target when it hits a large file.
    pub fn batch(&self, rng: &mut impl Rng) -> Vec<usize> {
        let target = rng.random_range(0..=2 * self.batch_bytes);
        let mut picked = vec![self.weights.sample(rng)];
        let mut bytes = self.sizes[picked[0]];
        loop {
            let next = self.weights.sample(rng);
            if bytes + self.sizes[next] > target {
                return picked;
            }
            bytes += self.sizes[next];
            picked.push(next);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;

    #[test]
    fn lognormal_sizes_hit_the_total_and_median() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let sizes = lognormal_sizes(&mut rng, 1_000_000_000, Some(1_000_000), 4_000_000);
        assert_eq!(sizes.iter().sum::<u64>(), 1_000_000_000);
        assert_eq!(sizes[0], 1_000_000);
        let mut rest = sizes[1..].to_vec();
        rest.sort_unstable();
        let median = rest[rest.len() / 2] as f64;
        assert!((median / LOGNORMAL_MEDIAN - 1.0).abs() < 0.1, "median {median}");
    }

    #[test]
    fn thrash_batches_average_near_target() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let sizes = lognormal_sizes(&mut rng, 5_000_000, None, 1_000_000);
        let model = ThrashModel::new(&sizes, 65_536);
        let n = 4000;
        let total: u64 = (0..n).map(|_| model.batch(&mut rng).iter().map(|&i| sizes[i]).sum::<u64>()).sum();
        let mean = total as f64 / n as f64;
        assert!(mean > 0.5 * 65_536.0 && mean < 1.5 * 65_536.0, "mean batch {mean}");
    }

    #[test]
    fn content_is_deterministic_and_distinct() {
        assert_eq!(content(3, 100), content(3, 100));
        assert_ne!(content(3, 100), content(4, 100));
    }
}
