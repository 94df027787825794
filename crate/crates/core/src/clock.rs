//! Scheduler clocks. Tests and simulations use [`VirtualClock`]; only the
//! daemon runs on [`WallClock`].

use std::time::{Duration, Instant};

pub trait Clock {
    /// Seconds since the clock started.
    fn now(&self) -> f64;
    /// Blocks (or jumps) until `now() >= at`.
    fn wait_until(&mut self, at: f64);
    /// Value recorded in the trace's `wall_time_s` column.
    fn wall_seconds(&self) -> f64;
}

/// Time that only moves when told to. Its wall time is its virtual time so
/// traces stay reproducible.
#[derive(Clone, Debug, Default)]
pub struct VirtualClock {
    now: f64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(now: f64) -> Self {
        VirtualClock { now }
    }

    pub fn advance(&mut self, seconds: f64) {
        self.now += seconds;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        self.now
    }

    fn wait_until(&mut self, at: f64) {
        if at > self.now {
            self.now = at;
        }
    }

    fn wall_seconds(&self) -> f64 {
        self.now
    }
}

#[derive(Clone, Debug)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock { start: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn wait_until(&mut self, at: f64) {
        let now = self.now();
        if at > now {
            std::thread::sleep(Duration::from_secs_f64(at - now));
        }
    }

    fn wall_seconds(&self) -> f64 {
        self.now()
    }
}
