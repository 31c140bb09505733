//! Per-frame shared state written concurrently during token passing.

use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};

use super::packed::{monotone_encode, pack_unchecked, AtomicPacked, PackedToken, NO_ARC};
use crate::error::{Error, Result};
use crate::wfst::{Arc, StateId};

/// Fixed-capacity append-only list of `u32`, safe for concurrent pushes.
#[derive(Debug)]
pub(crate) struct AtomicList {
    items: Vec<AtomicU32>,
    len: AtomicUsize,
}

impl AtomicList {
    pub fn with_capacity(cap: usize) -> Self {
        Self {
            items: (0..cap).map(|_| AtomicU32::new(0)).collect(),
            len: AtomicUsize::new(0),
        }
    }

    #[inline]
    pub fn push(&self, v: u32) {
        let i = self.len.fetch_add(1, Ordering::Relaxed);
        // capacity is sized so that this cannot overflow; see FrameState::new
        self.items[i].store(v, Ordering::Relaxed);
    }

    pub fn len(&self) -> usize {
        self.len.load(Ordering::Acquire).min(self.items.len())
    }

    pub fn to_vec(&self) -> Vec<u32> {
        self.items[..self.len()].iter().map(|a| a.load(Ordering::Relaxed)).collect()
    }

    pub fn clear(&self) {
        self.len.store(0, Ordering::Release);
    }
}

/// Predecessor record stored for the arc that produced a token.
#[derive(Debug, Default)]
struct ArcSlot {
    /// `stamp << 32 | pred`
    link: AtomicU64,
    /// `f64` bits of the accumulated cost.
    cost: AtomicU64,
}

/// Monotone `f64` -> `u64` map for atomic min over possibly negative costs.
#[inline]
fn encode_f64(c: f64) -> u64 {
    let b = c.to_bits();
    if b >> 63 != 0 {
        !b
    } else {
        b | (1 << 63)
    }
}

#[inline]
fn decode_f64(k: u64) -> f64 {
    if k >> 63 != 0 {
        f64::from_bits(k & !(1 << 63))
    } else {
        f64::from_bits(!k)
    }
}

/// Token-passing state of the frame under construction: one packed word per
/// graph state and one predecessor slot per graph arc.
pub struct FrameState {
    packs: Vec<AtomicPacked>,
    /// Pack values at the start of the current epsilon round.
    round_start: Vec<AtomicPacked>,
    dirty: Vec<AtomicBool>,
    slots: Vec<ArcSlot>,
    touched: AtomicList,
    improved: AtomicList,
    best: AtomicU64,
    stamp: u32,
    write_counts: Option<Vec<AtomicU32>>,
}

/// Winning incoming arc of a state after recombination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Winner {
    pub pack: PackedToken,
    pub cost: f64,
    /// Previous-frame token index for emitting arcs, source state for
    /// epsilon arcs; unused for the start token.
    pub pred: u32,
}

impl FrameState {
    pub fn new(num_states: usize, num_arcs: usize, instrument: bool) -> Self {
        Self {
            packs: (0..num_states).map(|_| AtomicPacked::default()).collect(),
            round_start: (0..num_states).map(|_| AtomicPacked::default()).collect(),
            dirty: (0..num_states).map(|_| AtomicBool::new(false)).collect(),
            slots: (0..num_arcs).map(|_| ArcSlot::default()).collect(),
            // a state enters `touched` when its pack leaves the sentinel,
            // which happens at most twice per frame (see reset_over_cutoff)
            touched: AtomicList::with_capacity(2 * num_states + 1),
            improved: AtomicList::with_capacity(num_states),
            best: AtomicU64::new(u64::MAX),
            stamp: 0,
            write_counts: instrument.then(|| (0..num_arcs).map(|_| AtomicU32::new(0)).collect()),
        }
    }

    /// Clears everything touched by the previous frame.
    pub fn begin_frame(&mut self, stamp: u32) {
        for s in self.touched.to_vec() {
            self.packs[s as usize].store(PackedToken::SENTINEL);
            self.round_start[s as usize].store(PackedToken::SENTINEL);
        }
        self.touched.clear();
        self.improved.clear();
        self.best.store(u64::MAX, Ordering::Relaxed);
        self.stamp = stamp;
        self.reset_write_counts();
    }

    /// Places the initial token (cost 0, no predecessor) at `state`.
    pub fn seed(&self, state: StateId) {
        let p = pack_unchecked(0.0, NO_ARC);
        if self.packs[state as usize].fetch_min(p).is_sentinel() {
            self.touched.push(state);
        }
        self.observe_cost(0.0);
    }

    /// Atomic token recombination: `packs[arc.dst] = min(packs[arc.dst],
    /// pack(key, arc.id))`; on a strict win the predecessor slot of `arc` is
    /// written. Returns whether this call won.
    #[inline]
    pub fn recombine(&self, key: f32, cost: f64, arc: &Arc, pred: u32) -> bool {
        let p = pack_unchecked(key, arc.id);
        let old = self.packs[arc.dst as usize].fetch_min(p);
        if old.is_sentinel() {
            self.touched.push(arc.dst);
        }
        if old > p {
            self.write_slot(arc.id, cost, pred);
            true
        } else {
            false
        }
    }

    /// Epsilon-round recombination. The candidate only competes if its cost
    /// key is strictly below the destination's key at the start of the
    /// round; equal-cost alternatives found later never displace a token,
    /// which keeps same-frame back-pointers acyclic.
    #[inline]
    pub fn recombine_epsilon(&self, key: f32, cost: f64, arc: &Arc, pred: StateId) -> bool {
        let p = pack_unchecked(key, arc.id);
        let snapshot = self.round_start[arc.dst as usize].load();
        if !snapshot.is_sentinel() && p.cost_key() >= snapshot.cost_key() {
            return false;
        }
        if self.recombine(key, cost, arc, pred) {
            if !self.dirty[arc.dst as usize].swap(true, Ordering::AcqRel) {
                self.improved.push(arc.dst);
            }
            true
        } else {
            false
        }
    }

    #[inline]
    fn write_slot(&self, arc: u32, cost: f64, pred: u32) {
        let slot = &self.slots[arc as usize];
        slot.cost.store(cost.to_bits(), Ordering::Relaxed);
        slot.link.store(((self.stamp as u64) << 32) | pred as u64, Ordering::Relaxed);
        if let Some(counts) = &self.write_counts {
            counts[arc as usize].fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Running minimum of accepted candidate costs this frame.
    #[inline]
    pub fn observe_cost(&self, cost: f64) {
        self.best.fetch_min(encode_f64(cost), Ordering::AcqRel);
    }

    #[inline]
    pub fn best_cost(&self) -> f64 {
        let k = self.best.load(Ordering::Acquire);
        if k == u64::MAX {
            f64::INFINITY
        } else {
            decode_f64(k)
        }
    }

    pub fn pack(&self, s: StateId) -> PackedToken {
        self.packs[s as usize].load()
    }

    /// Winning arc of `s`, validated against this frame's stamp.
    pub fn winner(&self, s: StateId) -> Result<Option<Winner>> {
        let pack = self.pack(s);
        if pack.is_sentinel() {
            return Ok(None);
        }
        if pack.arc_id() == NO_ARC {
            return Ok(Some(Winner { pack, cost: 0.0, pred: u32::MAX }));
        }
        let slot = self
            .slots
            .get(pack.arc_id() as usize)
            .ok_or_else(|| Error::Invariant(format!("state {s} won by unknown arc {}", pack.arc_id())))?;
        let link = slot.link.load(Ordering::Relaxed);
        if (link >> 32) as u32 != self.stamp {
            return Err(Error::Invariant(format!(
                "no predecessor record for winning arc {} of state {s}",
                pack.arc_id()
            )));
        }
        Ok(Some(Winner {
            pack,
            cost: f64::from_bits(slot.cost.load(Ordering::Relaxed)),
            pred: link as u32,
        }))
    }

    /// States whose pack left the sentinel this frame (may repeat).
    pub fn touched(&self) -> Vec<StateId> {
        self.touched.to_vec()
    }

    /// Drops emitting-pass winners whose cost key exceeds `key_cutoff` and
    /// snapshots the surviving packs as the start of epsilon round 1.
    /// Returns the survivors with their costs.
    pub fn reset_over_cutoff(&self, key_cutoff: f32) -> Result<Vec<(StateId, f64)>> {
        let limit = monotone_encode(key_cutoff);
        let mut touched = self.touched();
        touched.sort_unstable();
        touched.dedup();
        let mut live = Vec::with_capacity(touched.len());
        for s in touched {
            match self.winner(s)? {
                Some(w) if w.pack.cost_key() <= limit => {
                    self.round_start[s as usize].store(w.pack);
                    live.push((s, w.cost));
                }
                Some(_) => self.packs[s as usize].store(PackedToken::SENTINEL),
                None => {}
            }
        }
        Ok(live)
    }

    /// Collects the states improved during the last epsilon round, resets
    /// their dirty flags, and advances their round-start snapshots.
    pub fn finish_round(&self) -> Result<Vec<(StateId, f64)>> {
        let mut improved = self.improved.to_vec();
        self.improved.clear();
        improved.sort_unstable();
        let mut out = Vec::with_capacity(improved.len());
        for s in improved {
            self.dirty[s as usize].store(false, Ordering::Relaxed);
            let w = self
                .winner(s)?
                .ok_or_else(|| Error::Invariant(format!("improved state {s} has no token")))?;
            self.round_start[s as usize].store(w.pack);
            out.push((s, w.cost));
        }
        Ok(out)
    }

    pub fn max_arc_writes(&self) -> Option<u32> {
        self.write_counts
            .as_ref()
            .map(|c| c.iter().map(|a| a.load(Ordering::Relaxed)).max().unwrap_or(0))
    }

    pub fn reset_write_counts(&self) {
        if let Some(c) = &self.write_counts {
            c.iter().for_each(|a| a.store(0, Ordering::Relaxed));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::packed::{pack, unpack};

    fn arc(id: u32, dst: u32) -> Arc {
        Arc { src: 0, dst, ilabel: 1, olabel: 0, weight: 0.0, id }
    }

    #[test]
    fn strict_improvement_writes_slot() {
        let mut fs = FrameState::new(4, 8, true);
        fs.begin_frame(1);
        assert!(fs.recombine(1.0, 1.0, &arc(3, 2), 10));
        assert!(fs.recombine(0.5, 0.5, &arc(7, 2), 11));
        assert_eq!(fs.pack(2), pack(0.5, 7).unwrap());
        let w = fs.winner(2).unwrap().unwrap();
        assert_eq!((w.cost, w.pred), (0.5, 11));
        assert_eq!(fs.max_arc_writes(), Some(1));
    }

    #[test]
    fn losing_candidate_leaves_state_unchanged() {
        let mut fs = FrameState::new(4, 8, true);
        fs.begin_frame(1);
        assert!(fs.recombine(0.5, 0.5, &arc(7, 2), 11));
        assert!(!fs.recombine(1.0, 1.0, &arc(3, 2), 10));
        assert_eq!(unpack(fs.pack(2)), Some((0.5, 7)));
        assert_eq!(fs.winner(2).unwrap().unwrap().pred, 11);
    }

    #[test]
    fn equal_cost_smaller_arc_wins() {
        let mut fs = FrameState::new(2, 8, false);
        fs.begin_frame(1);
        fs.recombine(2.0, 2.0, &arc(5, 1), 0);
        fs.recombine(2.0, 2.0, &arc(4, 1), 1);
        fs.recombine(2.0, 2.0, &arc(6, 1), 2);
        assert_eq!(fs.pack(1).arc_id(), 4);
    }

    #[test]
    fn stale_slot_is_detected() {
        let mut fs = FrameState::new(2, 4, false);
        fs.begin_frame(1);
        fs.recombine(1.0, 1.0, &arc(0, 1), 0);
        fs.begin_frame(2);
        // forge a pack that points at a slot written in the previous frame
        fs.packs[1].store(pack(1.0, 0).unwrap());
        assert!(matches!(fs.winner(1), Err(Error::Invariant(_))));
    }

    #[test]
    fn begin_frame_resets_touched_states() {
        let mut fs = FrameState::new(3, 4, false);
        fs.begin_frame(1);
        fs.recombine(1.0, 1.0, &arc(0, 1), 0);
        fs.recombine(2.0, 2.0, &arc(1, 2), 0);
        assert_eq!(fs.best_cost(), f64::INFINITY);
        fs.observe_cost(1.0);
        assert_eq!(fs.best_cost(), 1.0);
        fs.begin_frame(2);
        assert!(fs.pack(1).is_sentinel() && fs.pack(2).is_sentinel());
        assert!(fs.touched().is_empty());
        assert_eq!(fs.best_cost(), f64::INFINITY);
    }

    #[test]
    fn epsilon_round_needs_strictly_lower_key() {
        let mut fs = FrameState::new(3, 8, false);
        fs.begin_frame(1);
        fs.recombine(1.0, 1.0, &arc(5, 1), 0);
        let live = fs.reset_over_cutoff(10.0).unwrap();
        assert_eq!(live, vec![(1, 1.0)]);
        // same key, smaller arc id: rejected against the snapshot
        assert!(!fs.recombine_epsilon(1.0, 1.0, &arc(2, 1), 0));
        assert!(fs.recombine_epsilon(0.75, 0.75, &arc(3, 1), 0));
        assert_eq!(fs.finish_round().unwrap(), vec![(1, 0.75)]);
        assert!(fs.finish_round().unwrap().is_empty());
    }

    #[test]
    fn over_cutoff_winners_are_cleared() {
        let mut fs = FrameState::new(3, 8, false);
        fs.begin_frame(1);
        fs.recombine(1.0, 1.0, &arc(0, 1), 0);
        fs.recombine(9.0, 9.0, &arc(1, 2), 0);
        let live = fs.reset_over_cutoff(5.0).unwrap();
        assert_eq!(live, vec![(1, 1.0)]);
        assert!(fs.pack(2).is_sentinel());
    }

    #[test]
    fn f64_encoding_is_monotone() {
        let v = [-1e300, -3.5, -0.0, 0.0, 1e-300, 2.0, 1e300];
        for w in v.windows(2) {
            assert!(encode_f64(w[0]) <= encode_f64(w[1]));
            assert_eq!(decode_f64(encode_f64(w[0])), w[0]);
        }
    }
}
