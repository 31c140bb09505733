//! Pre-allocated, sharded append-only vectors.
//!
//! `push` claims a slot with an atomic fetch-and-increment on the shard's
//! length counter and writes into it; no two pushes can receive the same
//! slot. Spreading writers over `K` shards keeps contention on any single
//! counter low.

use std::cell::UnsafeCell;
use std::mem::MaybeUninit;
use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use crate::error::{Error, Result};

struct Shard<T> {
    len: AtomicUsize,
    slots: OnceLock<Box<[UnsafeCell<MaybeUninit<T>>]>>,
}

pub struct ShardedArcStore<T> {
    shards: Vec<Shard<T>>,
    capacity: usize,
    /// Per-shard lengths recorded at each frame boundary.
    marks: Vec<Vec<usize>>,
}

// SAFETY: a slot is written only by the single `push` that claimed its index
// through `fetch_add`, and read only through `&mut self` after all writers
// have been joined.
unsafe impl<T: Copy + Send> Sync for ShardedArcStore<T> {}

impl<T: Copy> ShardedArcStore<T> {
    /// `num_shards` shards of `shard_capacity` slots each. Shard memory is
    /// allocated on first use.
    pub fn new(num_shards: usize, shard_capacity: usize) -> Self {
        let num_shards = num_shards.max(1);
        Self {
            shards: (0..num_shards)
                .map(|_| Shard { len: AtomicUsize::new(0), slots: OnceLock::new() })
                .collect(),
            capacity: shard_capacity,
            marks: Vec::new(),
        }
    }

    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn shard_capacity(&self) -> usize {
        self.capacity
    }

    /// Appends `item` to shard `worker mod K`.
    #[inline]
    pub fn push(&self, worker: usize, item: T) -> Result<()> {
        let shard = &self.shards[worker % self.shards.len()];
        let idx = shard.len.fetch_add(1, Ordering::Relaxed);
        if idx >= self.capacity {
            return Err(Error::Capacity {
                limit: "max-lattice-arcs",
                value: self.capacity,
            });
        }
        let slots = shard.slots.get_or_init(|| {
            let b: Box<[MaybeUninit<T>]> = Box::new_uninit_slice(self.capacity);
            // SAFETY: UnsafeCell<MaybeUninit<T>> has the same layout as
            // MaybeUninit<T>.
            unsafe { Box::from_raw(Box::into_raw(b) as *mut [UnsafeCell<MaybeUninit<T>>]) }
        });
        // SAFETY: `idx` was handed out exactly once by fetch_add.
        unsafe { (*slots[idx].get()).write(item) };
        Ok(())
    }

    fn shard_len(&self, k: usize) -> usize {
        self.shards[k].len.load(Ordering::Acquire).min(self.capacity)
    }

    /// Number of stored items over all shards.
    pub fn len(&mut self) -> usize {
        (0..self.shards.len()).map(|k| self.shard_len(k)).sum()
    }

    pub fn is_empty(&mut self) -> bool {
        self.len() == 0
    }

    /// Closes the current frame: items pushed since the previous mark form
    /// frame `num_frames()`.
    pub fn mark_frame(&mut self) {
        let lens = (0..self.shards.len()).map(|k| self.shard_len(k)).collect();
        self.marks.push(lens);
    }

    pub fn num_frames(&self) -> usize {
        self.marks.len()
    }

    /// Items of the marked frames in `frames`, shard by shard, each shard in
    /// slot order.
    pub fn collect(&mut self, frames: Range<usize>) -> Vec<T> {
        assert!(frames.end <= self.marks.len(), "frame range beyond last mark");
        if frames.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::new();
        for k in 0..self.shards.len() {
            let lo = if frames.start == 0 { 0 } else { self.marks[frames.start - 1][k] };
            let hi = self.marks[frames.end - 1][k];
            self.read_into(k, lo..hi, &mut out);
        }
        out
    }

    fn read_into(&self, k: usize, range: Range<usize>, out: &mut Vec<T>) {
        if range.is_empty() {
            return;
        }
        let slots = self.shards[k].slots.get().expect("non-empty shard is allocated");
        // SAFETY: slots below the shard length were fully written before the
        // caller obtained `&mut self`.
        out.extend(slots[range].iter().map(|s| unsafe { (*s.get()).assume_init() }));
    }

    /// Everything stored (marked or not), then resets all shards and marks.
    pub fn drain(&mut self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        for k in 0..self.shards.len() {
            let n = self.shard_len(k);
            self.read_into(k, 0..n, &mut out);
            self.shards[k].len.store(0, Ordering::Relaxed);
        }
        self.marks.clear();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pushes_to_one_shard() {
        let mut s = ShardedArcStore::new(4, 8);
        s.push(1, 'a').unwrap();
        s.push(1, 'b').unwrap();
        s.mark_frame();
        assert_eq!(s.collect(0..1), vec!['a', 'b']);
    }

    #[test]
    fn collect_scans_shards_in_order() {
        let mut s = ShardedArcStore::new(2, 8);
        s.push(1, 'b').unwrap();
        s.push(0, 'a').unwrap();
        s.push(3, 'c').unwrap();
        s.mark_frame();
        let got = s.collect(0..1);
        assert_eq!(got, vec!['a', 'b', 'c']);
        assert_eq!(got.len(), s.len());
    }

    #[test]
    fn empty_store() {
        let mut s: ShardedArcStore<u32> = ShardedArcStore::new(32, 4);
        s.mark_frame();
        assert!(s.collect(0..1).is_empty());
        assert!(s.drain().is_empty());
        assert!(s.is_empty());
    }

    #[test]
    fn full_shard_is_a_capacity_error() {
        let s = ShardedArcStore::new(2, 1);
        s.push(0, 1u8).unwrap();
        match s.push(0, 2u8) {
            Err(Error::Capacity { limit, .. }) => assert_eq!(limit, "max-lattice-arcs"),
            other => panic!("unexpected {other:?}"),
        }
        // the other shard is unaffected
        s.push(1, 3u8).unwrap();
    }

    #[test]
    fn frame_ranges() {
        let mut s = ShardedArcStore::new(3, 16);
        s.push(0, 1).unwrap();
        s.push(2, 2).unwrap();
        s.mark_frame();
        s.push(1, 3).unwrap();
        s.push(0, 4).unwrap();
        s.mark_frame();
        s.push(2, 5).unwrap();
        s.mark_frame();
        assert_eq!(s.collect(0..1), vec![1, 2]);
        assert_eq!(s.collect(1..2), vec![4, 3]);
        assert_eq!(s.collect(1..3), vec![4, 3, 5]);
        assert_eq!(s.collect(0..3).len(), 5);
        let mut all = s.drain();
        all.sort_unstable();
        assert_eq!(all, vec![1, 2, 3, 4, 5]);
        assert_eq!(s.num_frames(), 0);
        s.push(0, 9).unwrap();
        assert_eq!(s.drain(), vec![9]);
    }

    #[test]
    fn concurrent_pushes_keep_the_multiset() {
        let mut s = ShardedArcStore::new(32, 20_000);
        std::thread::scope(|sc| {
            for w in 0..8usize {
                let s = &s;
                sc.spawn(move || {
                    for i in 0..12_500u32 {
                        s.push(w, (w as u32) << 20 | i).unwrap();
                    }
                });
            }
        });
        let mut all = s.drain();
        assert_eq!(all.len(), 100_000);
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 100_000);
    }
}
