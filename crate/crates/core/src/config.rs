use std::fmt;
use std::path::{Path, PathBuf};

use crate::codec::FsParams;
use crate::error::{Error, Result};

/// Client configuration, stored as `key=value` lines.
///
/// Keys: `B` (pair bytes), `N` (backend files), `k` (drip rate),
/// `t` (drip time in seconds), `seed`, `backend_path`. Blank lines and
/// lines starting with `#` are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub pair_bytes: u32,
    pub pair_count: u64,
    pub drip_rate: u32,
    pub drip_time_s: f64,
    pub seed: Option<u64>,
    pub backend_path: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            pair_bytes: 64 * 1024,
            pair_count: 256,
            drip_rate: 3,
            drip_time_s: 10.0,
            seed: None,
            backend_path: PathBuf::from("backend"),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::BadParams(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::BadParams(format!("line {}: bad {what} {value:?}", n + 1));
            match key {
                "B" => cfg.pair_bytes = value.parse().map_err(|_| bad("B"))?,
                "N" => cfg.pair_count = value.parse().map_err(|_| bad("N"))?,
                "k" => cfg.drip_rate = value.parse().map_err(|_| bad("k"))?,
                "t" => cfg.drip_time_s = value.parse().map_err(|_| bad("t"))?,
                "seed" => cfg.seed = Some(value.parse().map_err(|_| bad("seed"))?),
                "backend_path" => cfg.backend_path = PathBuf::from(value),
                _ => return Err(Error::BadParams(format!("line {}: unknown key {key:?}", n + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.drip_time_s.is_finite() && self.drip_time_s > 0.0) {
            return Err(Error::BadParams(format!("t must be positive, got {}", self.drip_time_s)));
        }
        if self.drip_rate == 0 || u64::from(self.drip_rate) >= self.pair_count {
            return Err(Error::BadParams(format!("need 0 < k < N, got k={} N={}", self.drip_rate, self.pair_count)));
        }
        if self.pair_count > u64::from(u32::MAX) {
            return Err(Error::BadParams(format!("N too large: {}", self.pair_count)));
        }
        crate::codec::Geometry::new(self.pair_bytes as usize)?;
        Ok(())
    }

    pub fn params(&self) -> FsParams {
        FsParams::new(self.pair_bytes, self.pair_count, self.drip_rate, (self.drip_time_s * 1000.0).round() as u64)
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "B={}", self.pair_bytes)?;
        writeln!(f, "N={}", self.pair_count)?;
        writeln!(f, "k={}", self.drip_rate)?;
        writeln!(f, "t={}", self.drip_time_s)?;
        if let Some(seed) = self.seed {
            writeln!(f, "seed={seed}")?;
        }
        writeln!(f, "backend_path={}", self.backend_path.display())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let cfg = Config::parse("# comment\nB=4096\nN = 64\nk=2\nt=0.5\nseed=9\nbackend_path=/tmp/b\n").unwrap();
        assert_eq!(cfg.pair_bytes, 4096);
        assert_eq!(cfg.pair_count, 64);
        assert_eq!(cfg.drip_rate, 2);
        assert_eq!(cfg.drip_time_s, 0.5);
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.backend_path, PathBuf::from("/tmp/b"));
        assert_eq!(cfg.params().drip_time_ms, 500);
    }

    #[test]
    fn round_trips_through_display() {
        let cfg = Config { seed: Some(3), ..Config::default() };
        assert_eq!(Config::parse(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::parse("q=1").is_err());
        assert!(Config::parse("B").is_err());
        assert!(Config::parse("k=abc").is_err());
        assert!(Config::parse("N=4\nk=4").is_err());
        assert!(Config::parse("t=0").is_err());
    }
}
