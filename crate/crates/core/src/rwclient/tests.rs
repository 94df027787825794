use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::backend::MemStore;
use crate::codec::KEY_LEN;

fn cipher() -> Arc<Cipher> {
    Arc::new(Cipher::seeded(&[9u8; KEY_LEN], 1))
}

fn client(n: u64, k: u32) -> (Arc<MemStore>, RwClient) {
    let store = Arc::new(MemStore::new(n as u32));
    let rw = RwClient::init(store.clone(), cipher(), FsParams::new(4096, n, k, 10_000), Some(7)).unwrap();
    (store, rw)
}

fn drain(rw: &mut RwClient, max: usize) -> usize {
    let mut epochs = 0;
    // At least one sync so metadata-only changes reach a superblock.
    while epochs == 0 || !(rw.buffer().is_empty() && !rw.table().has_dirty_leaves()) {
        assert!(epochs < max, "buffer did not drain in {max} epochs");
        let now = rw.now() + 10.0;
        rw.tick(now, now).unwrap();
        epochs += 1;
    }
    let now = rw.now() + 10.0;
    rw.flush_staged(now, now).unwrap();
    rw.set_now(now);
    epochs
}

#[test]
fn create_lists_an_empty_file_in_root() {
    let (_, mut rw) = client(16, 3);
    let id = rw.create("/a").unwrap();
    assert_eq!(rw.list("/").unwrap(), vec![DirEntry::new("a", id)]);
    assert_eq!(rw.stat("/a").unwrap().size, 0);
    assert!(matches!(rw.create("/a"), Err(Error::Exists(_))));
}

#[test]
fn deleted_file_is_not_found() {
    let (_, mut rw) = client(16, 3);
    rw.put("/a", b"hello").unwrap();
    rw.delete("/a").unwrap();
    assert!(matches!(rw.read_all("/a"), Err(Error::NotFound(_))));
    assert!(matches!(rw.delete("/a"), Err(Error::NotFound(_))));
}

#[test]
fn non_empty_directory_cannot_be_deleted() {
    let (_, mut rw) = client(16, 3);
    rw.mkdir("/d").unwrap();
    rw.put("/d/x", b"1").unwrap();
    assert!(matches!(rw.delete("/d"), Err(Error::IsDirectory(_))));
    rw.delete("/d/x").unwrap();
    rw.delete("/d").unwrap();
}

#[test]
fn one_byte_write_buffers_one_fragment() {
    let (_, mut rw) = client(64, 8);
    let cap = rw.geometry().data_capacity();
    rw.put("/f", &vec![1u8; 10 * cap]).unwrap();
    drain(&mut rw, 200);
    rw.write("/f", 0, &[2]).unwrap();
    let id = rw.lookup("/f").unwrap();
    assert_eq!(rw.buffer().pending_indices(id).collect::<Vec<_>>(), vec![0]);
    assert_eq!(rw.read("/f", 0, cap as u64).unwrap()[..2], [2, 1]);
}

#[test]
fn buffered_read_touches_no_backend_file() {
    let (_, mut rw) = client(16, 3);
    rw.put("/f", b"fresh bytes").unwrap();
    let id = rw.lookup("/f").unwrap();
    let entry = rw.table().get(id).unwrap().clone();
    let before = rw.reader().read_count();
    assert_eq!(rw.current_fragment(&entry, 0).unwrap(), b"fresh bytes");
    assert_eq!(rw.reader().read_count(), before);
}

#[test]
fn grown_fragments_are_unavailable() {
    let (_, mut rw) = client(16, 3);
    let cap = rw.geometry().data_capacity() as u64;
    rw.create("/f").unwrap();
    rw.resize("/f", 3 * cap).unwrap();
    let entry = rw.stat("/f").unwrap();
    assert_eq!(entry.block_ids, vec![BlockId::UNALLOCATED; 3]);
    assert!(matches!(rw.read("/f", cap, cap), Err(Error::Unavailable(_))));
}

#[test]
fn misaligned_access_is_rejected() {
    let (_, mut rw) = client(16, 3);
    let cap = rw.geometry().data_capacity() as u64;
    rw.put("/f", &vec![0u8; 3 * cap as usize]).unwrap();
    assert!(matches!(rw.write("/f", 1, b"x"), Err(Error::BadOffset(_))));
    assert!(matches!(rw.read("/f", 7, 5), Err(Error::BadOffset(_))));
    assert!(matches!(rw.write("/f", 4 * cap, b"x"), Err(Error::BadOffset(_))));
    assert_eq!(rw.read("/f", 2 * cap, 5).unwrap().len(), 5);
}

#[test]
fn idle_sync_is_pure_dummy_traffic() {
    let (store, mut rw) = client(16, 3);
    let before = store.snapshot();
    let report = rw.sync_epoch().unwrap();
    assert_eq!(report.fragments_cleared, 0);
    let rec = rw.flush_staged(10.0, 10.0).unwrap();
    assert_eq!(rec.event.indices.len(), 4);
    assert_eq!(rec.event.indices[0], 0);
    assert_eq!(rec.files.last().unwrap().0, 0);
    let after = store.snapshot();
    for &i in &rec.event.indices {
        assert_ne!(before[i as usize], after[i as usize]);
    }
}

#[test]
fn full_fragment_clears_in_one_epoch_and_old_copy_goes_stale() {
    let (_, mut rw) = client(16, 3);
    let cap = rw.geometry().data_capacity();
    rw.put("/f", &vec![5u8; cap]).unwrap();
    let report = rw.sync_epoch_with_pairs(&[1, 2, 3]).unwrap();
    assert_eq!(report.buffer_fragments_remaining, 0);
    rw.flush_staged(10.0, 10.0).unwrap();
    let id = rw.lookup("/f").unwrap();
    let old = rw.stat("/f").unwrap().block_ids[0];
    rw.write("/f", 0, &vec![6u8; cap]).unwrap();
    rw.sync_epoch_with_pairs(&[4, 5, 6]).unwrap();
    rw.flush_staged(20.0, 20.0).unwrap();
    assert_ne!(rw.stat("/f").unwrap().block_ids[0], old);
    // Protected for one more sync, then stale.
    rw.sync_epoch_with_pairs(&[7, 8, 9]).unwrap();
    let stale = rw.classify_pairs(&[old.pair()]).unwrap();
    let mine: Vec<_> = stale.iter().filter(|r| r.file_id == id).collect();
    assert_eq!(mine.len(), 1);
    assert!(!mine[0].live);
}

#[test]
fn synced_files_survive_remount() {
    let (store, mut rw) = client(32, 4);
    let cap = rw.geometry().data_capacity();
    rw.mkdir("/docs").unwrap();
    rw.put("/docs/big", &(0..3 * cap + 100).map(|i| i as u8).collect::<Vec<_>>()).unwrap();
    rw.put("/small", b"tiny").unwrap();
    drain(&mut rw, 500);
    drop(rw);
    let rw = RwClient::mount(store, cipher(), Some(1)).unwrap();
    assert_eq!(rw.read_all("/small").unwrap(), b"tiny");
    assert_eq!(rw.read_all("/docs/big").unwrap().len(), 3 * cap + 100);
    assert_eq!(rw.list("/").unwrap().len(), 2);
}

#[test]
fn scheduler_ticks_exactly_t_apart() {
    let (_, mut rw) = client(16, 3);
    let mut clock = crate::clock::VirtualClock::new();
    rw.run_scheduler(&mut clock, RunUntil::Epochs(10)).unwrap();
    rw.run_scheduler(&mut clock, RunUntil::Epochs(1)).unwrap();
    let trace = rw.trace();
    assert_eq!(trace.len(), 10);
    for (i, e) in trace.iter().enumerate() {
        assert_eq!(e.virtual_time_s, 20.0 + 10.0 * i as f64);
        assert_eq!(e.indices.len(), 4);
    }
}

#[test]
fn eviction_moves_entries_into_leaves_and_back() {
    let (store, mut rw) = client(64, 8);
    let count = 3 * rw.params().cache_capacity as usize;
    for i in 0..count {
        rw.put(&format!("/f{i}"), format!("data {i}").as_bytes()).unwrap();
    }
    drain(&mut rw, 2000);
    assert!(!rw.table().root().is_empty());
    drop(rw);
    let rw = RwClient::mount(store, cipher(), Some(2)).unwrap();
    for i in 0..count {
        assert_eq!(rw.read_all(&format!("/f{i}")).unwrap(), format!("data {i}").as_bytes());
    }
}

#[derive(Clone, Debug)]
enum Op {
    Put(u8, usize, u8),
    Write(u8, usize, u8),
    Resize(u8, usize),
    Delete(u8),
    Sync,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..6, 0usize..5000, any::<u8>()).prop_map(|(f, n, b)| Op::Put(f, n, b)),
        (0u8..6, 0usize..3, any::<u8>()).prop_map(|(f, n, b)| Op::Write(f, n, b)),
        (0u8..6, 0usize..5000).prop_map(|(f, n)| Op::Resize(f, n)),
        (0u8..6).prop_map(Op::Delete),
        Just(Op::Sync),
        Just(Op::Sync),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The RW view always equals a plain in-memory model, the re-pack never
    /// leaves a usable block empty, and a drained filesystem remounts to the
    /// same content.
    #[test]
    fn matches_model(ops in proptest::collection::vec(op(), 1..40)) {
        let (store, mut rw) = client(16, 3);
        let cap = rw.geometry().data_capacity();
        // Content plus, per fragment, whether it has ever been written.
        let mut model: BTreeMap<String, (Vec<u8>, Vec<bool>)> = BTreeMap::new();
        for op in ops {
            match op {
                Op::Put(f, n, b) => {
                    let data = vec![b; n];
                    rw.put(&format!("/f{f}"), &data).unwrap();
                    model.insert(format!("/f{f}"), (data, vec![true; n.div_ceil(cap)]));
                }
                Op::Write(f, frag, b) => {
                    let path = format!("/f{f}");
                    if let Some((cur, avail)) = model.get_mut(&path) {
                        let off = (frag * cap).min(cur.len() / cap * cap);
                        let len = cap.min(cur.len().saturating_sub(off)).max(1);
                        rw.write(&path, off as u64, &vec![b; len]).unwrap();
                        cur.resize(cur.len().max(off + len), 0);
                        cur[off..off + len].fill(b);
                        avail.resize(cur.len().div_ceil(cap), false);
                        avail[off / cap] = true;
                    }
                }
                Op::Resize(f, n) => {
                    let path = format!("/f{f}");
                    if let Some((cur, avail)) = model.get_mut(&path) {
                        rw.resize(&path, n as u64).unwrap();
                        cur.resize(n, 0);
                        avail.resize(n.div_ceil(cap), false);
                    }
                }
                Op::Delete(f) => {
                    let path = format!("/f{f}");
                    if model.remove(&path).is_some() {
                        rw.delete(&path).unwrap();
                    }
                }
                Op::Sync => {
                    let now = rw.now() + 10.0;
                    let r = rw.tick(now, now).unwrap().report;
                    if r.buffer_fragments_remaining > 0 && r.empty_blocks > 0 {
                        // Whatever is left must be a small fragment barred
                        // from every pair that still has an empty block.
                        for k in rw.buffer().drain_order() {
                            let FragmentKey::Data { file_id, .. } = k else {
                                prop_assert!(false, "leaf left behind: {:?}", r);
                                unreachable!()
                            };
                            prop_assert!(!rw.geometry().is_full_stored(rw.buffer().get(&k).unwrap().len));
                            for &p in &r.pairs_chosen {
                                let pair = &rw.staged_pairs[&p];
                                let barred = pair.iter().any(|b| matches!(b, Block::Split(s) if s.find(file_id).is_some()));
                                prop_assert!(barred || pair.iter().all(|b| !b.is_empty()), "usable block left empty: {:?}", r);
                            }
                        }
                    }
                }
            }
            for (path, (content, avail)) in &model {
                if avail.iter().all(|&a| a) {
                    prop_assert_eq!(&rw.read_all(path).unwrap(), content);
                } else {
                    prop_assert!(matches!(rw.read_all(path), Err(Error::Unavailable(_))));
                }
            }
        }
        drain(&mut rw, 3000);
        drop(rw);
        let rw = RwClient::mount(store, cipher(), None).unwrap();
        for (path, (content, avail)) in &model {
            if avail.iter().all(|&a| a) {
                prop_assert_eq!(&rw.read_all(path).unwrap(), content);
            }
        }
        prop_assert_eq!(rw.list("/").unwrap().len(), model.len());
    }
}
