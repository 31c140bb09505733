use std::sync::atomic::{AtomicU64, Ordering};

use parlat::decoder::{pack, unpack, AtomicPacked};
use parlat::lattice::ShardedArcStore;
use parlat::scheduler::{static_partition, Dispatcher};
use parlat::Error;

#[test]
fn concurrent_min_keeps_the_smallest_pack() {
    let slot = AtomicPacked::default();
    let best = AtomicU64::new(u64::MAX);
    std::thread::scope(|s| {
        for t in 0..8u32 {
            let (slot, best) = (&slot, &best);
            s.spawn(move || {
                for i in 0..2000u32 {
                    let cost = ((i * 7919 + t * 104729) % 5000) as f32 / 10.0;
                    let p = pack(cost, t * 2000 + i).unwrap();
                    slot.fetch_min(p);
                    best.fetch_min(p.0, Ordering::Relaxed);
                }
            });
        }
    });
    assert_eq!(slot.load().0, best.load(Ordering::Relaxed));
    let (c, _) = unpack(slot.load()).unwrap();
    assert_eq!(c, 0.0);
}

#[test]
fn store_overflow_is_a_capacity_error() {
    let store = ShardedArcStore::new(2, 3);
    for i in 0..3 {
        store.push(0, i).unwrap();
    }
    assert!(matches!(store.push(2, 9), Err(Error::Capacity { .. })));
    store.push(1, 9).unwrap();
}

#[test]
fn dispatcher_hands_out_every_index_once() {
    let d = Dispatcher::new(5000);
    let claimed: Vec<Vec<usize>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..6)
            .map(|_| {
                s.spawn(|| {
                    let mut mine = Vec::new();
                    while let Some(i) = d.claim_next() {
                        mine.push(i);
                    }
                    mine
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut all: Vec<usize> = claimed.concat();
    all.sort_unstable();
    assert_eq!(all, (0..5000).collect::<Vec<_>>());
}

#[test]
fn static_partition_covers_all_arcs() {
    let degrees = [5, 0, 17, 3, 3, 0, 40, 1];
    for workers in 1..10 {
        let p = static_partition(&degrees, workers);
        let mut seen: Vec<(usize, usize)> = Vec::new();
        for w in 0..workers {
            for (tok, r) in p.segments(w) {
                seen.extend(r.map(|a| (tok, a)));
            }
        }
        seen.sort_unstable();
        let expect: Vec<(usize, usize)> =
            degrees.iter().enumerate().flat_map(|(t, &d)| (0..d).map(move |a| (t, a))).collect();
        assert_eq!(seen, expect);
    }
}
