//! Stand-in for a cloud sync service: copies each flushed backend file to
//! replica stores after a delay, whole files only and in flush order.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::backend::{FlushRecord, PairStore};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Delay {
    Fixed(f64),
    /// Uniform in `[lo, hi]` seconds, drawn per file.
    Uniform(f64, f64),
}

struct Replica {
    store: Arc<dyn PairStore>,
    delay: Delay,
    /// `(arrival time, index, envelope)`, arrival times non-decreasing.
    inbound: VecDeque<(f64, u32, Vec<u8>)>,
    last_arrival: f64,
}

pub struct PropagationSim {
    replicas: Vec<Replica>,
    rng: ChaCha20Rng,
    now: f64,
}

impl PropagationSim {
    pub fn new(seed: u64) -> Self {
        PropagationSim { replicas: Vec::new(), rng: ChaCha20Rng::seed_from_u64(seed), now: 0.0 }
    }

    /// Adds a replica, first copying every file of `source` into it.
    pub fn add_replica(&mut self, source: &dyn PairStore, replica: Arc<dyn PairStore>, delay: Delay) -> Result<usize> {
        for i in 0..source.file_count() {
            replica.write(i, &source.read(i)?)?;
        }
        self.replicas.push(Replica { store: replica, delay, inbound: VecDeque::new(), last_arrival: f64::MIN });
        Ok(self.replicas.len() - 1)
    }

    pub fn replica(&self, i: usize) -> &Arc<dyn PairStore> {
        &self.replicas[i].store
    }

    pub fn replica_count(&self) -> usize {
        self.replicas.len()
    }

    /// Queues every file of a flush that happened at `flush_time`.
    pub fn on_flush(&mut self, record: &FlushRecord, flush_time: f64) {
        for r in &mut self.replicas {
            for (index, envelope) in &record.files {
                let delay = match r.delay {
                    Delay::Fixed(d) => d,
                    Delay::Uniform(lo, hi) => self.rng.random_range(lo..=hi),
                };
                // A later file never overtakes an earlier one.
                let arrival = (flush_time + delay).max(r.last_arrival);
                r.last_arrival = arrival;
                r.inbound.push_back((arrival, *index, envelope.clone()));
            }
        }
    }

    /// Delivers everything due by `until`.
    pub fn propagate(&mut self, until: f64) -> Result<usize> {
        let mut delivered = 0;
        for r in &mut self.replicas {
            while r.inbound.front().is_some_and(|(at, _, _)| *at <= until) {
                let (_, index, envelope) = r.inbound.pop_front().expect("front checked");
                r.store.write(index, &envelope)?;
                delivered += 1;
            }
        }
        self.now = self.now.max(until);
        Ok(delivered)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Files still in flight to replica `i`.
    pub fn in_flight(&self, i: usize) -> usize {
        self.replicas[i].inbound.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MemStore;
    use crate::codec::{Cipher, FsParams, KEY_LEN};
    use crate::rwclient::RwClient;

    fn source() -> (Arc<MemStore>, RwClient) {
        let store = Arc::new(MemStore::new(16));
        let cipher = Arc::new(Cipher::seeded(&[1u8; KEY_LEN], 2));
        let rw = RwClient::init(store.clone(), cipher, FsParams::new(4096, 16, 3, 10_000), Some(5)).unwrap();
        (store, rw)
    }

    #[test]
    fn zero_delay_keeps_replica_identical() {
        let (store, mut rw) = source();
        let mut sim = PropagationSim::new(1);
        let replica = Arc::new(MemStore::new(16));
        sim.add_replica(store.as_ref(), replica.clone(), Delay::Fixed(0.0)).unwrap();
        rw.put("/x", b"payload").unwrap();
        for i in 1..=5 {
            let t = 10.0 * i as f64;
            if let Some(rec) = rw.tick(t, t).unwrap().flush {
                sim.on_flush(&rec, t);
            }
            sim.propagate(t).unwrap();
            assert_eq!(replica.snapshot(), store.snapshot());
        }
    }

    #[test]
    fn delayed_files_arrive_in_flush_order() {
        let (store, mut rw) = source();
        let mut sim = PropagationSim::new(1);
        let replica = Arc::new(MemStore::new(16));
        sim.add_replica(store.as_ref(), replica.clone(), Delay::Fixed(5.0)).unwrap();
        rw.sync_epoch().unwrap();
        let rec = rw.flush_staged(10.0, 10.0).unwrap();
        sim.on_flush(&rec, 10.0);
        sim.propagate(14.9).unwrap();
        assert_eq!(sim.in_flight(0), rec.files.len());
        assert_ne!(replica.snapshot(), store.snapshot());
        sim.propagate(15.0).unwrap();
        assert_eq!(replica.snapshot(), store.snapshot());
    }

    #[test]
    fn independent_replicas_converge() {
        let (store, mut rw) = source();
        let mut sim = PropagationSim::new(9);
        let a = Arc::new(MemStore::new(16));
        let b = Arc::new(MemStore::new(16));
        sim.add_replica(store.as_ref(), a.clone(), Delay::Uniform(0.0, 8.0)).unwrap();
        sim.add_replica(store.as_ref(), b.clone(), Delay::Uniform(1.0, 3.0)).unwrap();
        for i in 0..20 {
            rw.put(&format!("/f{i}"), &vec![i as u8; 700]).unwrap();
            let t = 10.0 * (i + 1) as f64;
            if let Some(rec) = rw.tick(t, t).unwrap().flush {
                sim.on_flush(&rec, t);
            }
            sim.propagate(t).unwrap();
        }
        sim.propagate(1e9).unwrap();
        assert_eq!(a.snapshot(), store.snapshot());
        assert_eq!(b.snapshot(), store.snapshot());
    }
}
