//! 64-bit token words: an order-preserving encoding of a 32-bit cost in the
//! high half and the arc id in the low half, so that unsigned integer min is
//! lexicographic min over `(cost, arc id)`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::wfst::ArcId;

/// Arc-id field of the token seeded at the start state.
pub const NO_ARC: ArcId = u32::MAX;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PackedToken(pub u64);

impl PackedToken {
    /// All ones: "no token at this state". Never produced by [`pack`] for a
    /// finite cost.
    pub const SENTINEL: PackedToken = PackedToken(u64::MAX);

    #[inline]
    pub fn is_sentinel(self) -> bool {
        self == Self::SENTINEL
    }

    /// Encoded cost half, comparable as an unsigned integer.
    #[inline]
    pub fn cost_key(self) -> u32 {
        (self.0 >> 32) as u32
    }

    #[inline]
    pub fn arc_id(self) -> ArcId {
        self.0 as u32
    }
}

impl fmt::Debug for PackedToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PackedToken({:#018x})", self.0)
    }
}

/// Total-order-preserving map from finite `f32` to `u32`: negative values
/// have every bit flipped, non-negative values only the sign bit set.
#[inline]
pub fn monotone_encode(c: f32) -> u32 {
    let b = c.to_bits();
    if b & 0x8000_0000 != 0 {
        !b
    } else {
        b | 0x8000_0000
    }
}

#[inline]
pub fn monotone_decode(k: u32) -> f32 {
    if k & 0x8000_0000 != 0 {
        f32::from_bits(k & 0x7fff_ffff)
    } else {
        f32::from_bits(!k)
    }
}

/// Packs a non-negative finite cost with its arc id.
pub fn pack(cost: f32, arc_id: ArcId) -> Result<PackedToken> {
    if !cost.is_finite() || cost < 0.0 {
        return Err(Error::Usage(format!("cannot pack cost {cost}")));
    }
    Ok(pack_unchecked(cost, arc_id))
}

#[inline]
pub(crate) fn pack_unchecked(cost: f32, arc_id: ArcId) -> PackedToken {
    PackedToken(((monotone_encode(cost) as u64) << 32) | arc_id as u64)
}

/// Inverse of [`pack`]; `None` for the sentinel.
#[inline]
pub fn unpack(p: PackedToken) -> Option<(f32, ArcId)> {
    if p.is_sentinel() {
        None
    } else {
        Some((monotone_decode(p.cost_key()), p.arc_id()))
    }
}

/// Atomic cell holding a [`PackedToken`] with min-update semantics.
#[derive(Debug)]
pub struct AtomicPacked(AtomicU64);

impl Default for AtomicPacked {
    fn default() -> Self {
        Self(AtomicU64::new(u64::MAX))
    }
}

impl AtomicPacked {
    #[inline]
    pub fn load(&self) -> PackedToken {
        PackedToken(self.0.load(Ordering::Acquire))
    }

    #[inline]
    pub fn store(&self, p: PackedToken) {
        self.0.store(p.0, Ordering::Release)
    }

    /// Stores `min(current, p)` and returns the previous value.
    #[inline]
    pub fn fetch_min(&self, p: PackedToken) -> PackedToken {
        PackedToken(self.0.fetch_min(p.0, Ordering::AcqRel))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_cost_encoding() {
        assert_eq!(monotone_encode(0.0), 0x8000_0000);
        assert_eq!(pack(0.0, 5).unwrap(), PackedToken(0x8000_0000_0000_0005));
    }

    #[test]
    fn arc_id_breaks_ties() {
        for c in [0.0f32, 0.75, 13.5, 1e6] {
            assert!(pack(c, 3).unwrap() < pack(c, 7).unwrap());
        }
    }

    #[test]
    fn roundtrip_and_sentinel() {
        assert_eq!(unpack(pack(0.75, 42).unwrap()), Some((0.75, 42)));
        assert_eq!(unpack(PackedToken::SENTINEL), None);
        assert!(pack(f32::MAX, NO_ARC).unwrap() < PackedToken::SENTINEL);
    }

    #[test]
    fn rejects_bad_costs() {
        assert!(pack(-0.5, 1).is_err());
        assert!(pack(f32::NAN, 1).is_err());
        assert!(pack(f32::INFINITY, 1).is_err());
    }

    #[test]
    fn encoding_orders_signed_values() {
        let vals = [-1e9f32, -2.5, -1e-30, -0.0, 0.0, 1e-30, 0.5, 3.0, 1e9];
        for w in vals.windows(2) {
            assert!(monotone_encode(w[0]) <= monotone_encode(w[1]), "{:?}", w);
            assert_eq!(monotone_decode(monotone_encode(w[0])).to_bits(), w[0].to_bits());
        }
    }

    #[test]
    fn million_random_roundtrips() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1_000_000 {
            let c = f32::from_bits(rng.gen_range(0..0x7f80_0000u32));
            let a: u32 = rng.gen();
            let p = pack(c, a).unwrap();
            let (c2, a2) = unpack(p).unwrap();
            assert_eq!((c2.to_bits(), a2), (c.to_bits(), a));
        }
    }

    proptest! {
        #[test]
        fn order_matches_float_order(c1 in 0.0f32..1e7, c2 in 0.0f32..1e7, a in any::<u32>(), b in any::<u32>()) {
            let (p1, p2) = (pack(c1, a).unwrap(), pack(c2, b).unwrap());
            if c1 < c2 {
                prop_assert!(p1 < p2);
            } else if c1 > c2 {
                prop_assert!(p1 > p2);
            } else {
                prop_assert_eq!(p1 < p2, a < b);
            }
        }
    }

    #[test]
    fn atomic_fetch_min_keeps_global_minimum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let cell = std::sync::Arc::new(AtomicPacked::default());
            let packs: Vec<PackedToken> = (0..64)
                .map(|i| pack(rng.gen_range(0.0..100.0), i).unwrap())
                .collect();
            let expect = *packs.iter().min().unwrap();
            std::thread::scope(|s| {
                for chunk in packs.chunks(8) {
                    let cell = &cell;
                    s.spawn(move || {
                        for &p in chunk {
                            cell.fetch_min(p);
                        }
                    });
                }
            });
            assert_eq!(cell.load(), expect);
        }
    }
}
