//! Lattice pruning by extra cost.
//!
//! The extra cost of an arc is the cost of the best complete path through it
//! minus the cost of the best path overall. With forward costs `fwd` taken
//! from the tokens, and node extra costs `x`, an arc `u -> v` has
//!
//! ```text
//! extra(u -> v) = fwd(u) + cost(u -> v) - fwd(v) + x(v)
//! x(u)          = min over arcs leaving u of extra(u -> ...)
//! ```
//!
//! When the lattice carries final costs, a last-frame node starts at its
//! total cost minus the best total. A live frontier (no final costs yet)
//! starts every node at zero, so nothing that leads to a surviving token is
//! pruned before the utterance is over.
//!
//! Frames are processed from the frontier backwards. Inside a frame, arcs
//! are relaxed in parallel with an atomic min on the source node; epsilon
//! arcs (which stay inside the frame) are swept repeatedly until no node
//! value moves. Arcs whose extra cost exceeds the lattice beam are marked
//! pruned, never removed.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use rayon::prelude::*;

use super::{Lattice, LatticeArc, LatticeFrame};
use crate::error::{Error, Result};

/// Node value changes at or below this are treated as converged.
pub const CONVERGENCE_TOL: f64 = 1e-9;

const MIN_PAR_LEN: usize = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PruneStats {
    /// Frames whose extra costs were recomputed.
    pub frames_visited: usize,
    /// Relaxation sweeps over arc sets, summed over frames.
    pub sweeps: usize,
    /// Arcs newly marked pruned.
    pub newly_pruned: usize,
}

/// Recomputes extra costs backwards from the lattice's last frame and marks
/// arcs with extra cost above `lattice_beam` as pruned.
pub fn prune_lattice(lat: &mut Lattice, lattice_beam: f64) -> Result<PruneStats> {
    let n = lat.num_frames();
    if n == 0 {
        return Err(Error::DecodeFailure("cannot prune an empty lattice".into()));
    }
    let last = n - 1;
    let init: Vec<f64> = match lat.final_costs() {
        Some(costs) => {
            let totals: Vec<f64> = lat.frames()[last]
                .fwd
                .iter()
                .zip(costs)
                .map(|(f, c)| c.map_or(f64::INFINITY, |c| f + c as f64))
                .collect();
            let best_total = totals.iter().copied().fold(f64::INFINITY, f64::min);
            if !best_total.is_finite() {
                return Err(Error::DecodeFailure("no lattice path reaches a final node".into()));
            }
            totals.into_iter().map(|t| clamp(t - best_total)).collect()
        }
        None => vec![0.0; lat.frames()[last].num_nodes()],
    };

    let reusable = if lat.memo.beam == Some(lattice_beam) { lat.memo.valid_frames } else { 0 };
    let mut stats = PruneStats::default();
    let frames = lat.frames_mut();

    for f in (0..=last).rev() {
        let (below, above) = frames.split_at_mut(f + 1);
        let cur = &mut below[f];
        let nodes = cur.num_nodes();

        let extra: Vec<AtomicU64> = if f == last {
            init.iter().map(|e| AtomicU64::new(e.to_bits())).collect()
        } else {
            (0..nodes).map(|_| AtomicU64::new(f64::INFINITY.to_bits())).collect()
        };

        let LatticeFrame { fwd, emitting, epsilon, extra: stored, .. } = cur;

        if let Some(next) = above.first() {
            emitting
                .par_iter_mut()
                .with_min_len(MIN_PAR_LEN)
                .filter(|a| !a.pruned)
                .for_each(|a| {
                    let e = arc_extra(a, fwd, &next.fwd, next.extra[a.to.idx as usize]);
                    a.extra_cost = e;
                    extra[a.from.idx as usize].fetch_min(e.to_bits(), Ordering::AcqRel);
                });
            stats.sweeps += 1;
        }

        if !epsilon.is_empty() {
            let cap = nodes + 2;
            let mut rounds = 0;
            loop {
                rounds += 1;
                if rounds > cap {
                    return Err(Error::Invariant(format!(
                        "epsilon extra costs in frame {f} did not converge in {cap} sweeps"
                    )));
                }
                let changed = AtomicBool::new(false);
                epsilon
                    .par_iter_mut()
                    .with_min_len(MIN_PAR_LEN)
                    .filter(|a| !a.pruned)
                    .for_each(|a| {
                        let to = f64::from_bits(extra[a.to.idx as usize].load(Ordering::Acquire));
                        let e = arc_extra(a, fwd, fwd, to);
                        a.extra_cost = e;
                        let old = f64::from_bits(extra[a.from.idx as usize].fetch_min(e.to_bits(), Ordering::AcqRel));
                        if old - e > CONVERGENCE_TOL {
                            changed.store(true, Ordering::Relaxed);
                        }
                    });
                stats.sweeps += 1;
                if !changed.load(Ordering::Relaxed) {
                    break;
                }
            }
        }

        for a in emitting.iter_mut().chain(epsilon.iter_mut()) {
            if !a.pruned && a.extra_cost > lattice_beam {
                a.pruned = true;
                stats.newly_pruned += 1;
            }
        }

        let new: Vec<f64> = extra.into_iter().map(|e| f64::from_bits(e.into_inner())).collect();
        let unchanged = f < last
            && f < reusable
            && new.iter().zip(stored.iter()).all(|(a, b)| same(*a, *b));
        *stored = new;
        stats.frames_visited += 1;
        if unchanged {
            // everything below depends only on this frame's values
            break;
        }
    }

    lat.memo.beam = Some(lattice_beam);
    lat.memo.valid_frames = n;
    Ok(stats)
}

#[inline]
fn arc_extra(a: &LatticeArc, from_fwd: &[f64], to_fwd: &[f64], to_extra: f64) -> f64 {
    clamp(a.extend(from_fwd[a.from.idx as usize]) - to_fwd[a.to.idx as usize] + to_extra)
}

/// Extra costs are non-negative by definition; rounding in the forward
/// costs can push them a hair below zero.
#[inline]
fn clamp(e: f64) -> f64 {
    e.max(0.0)
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= CONVERGENCE_TOL
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::super::LatticeNodeId;
    use super::*;

    fn extras(lat: &Lattice) -> Vec<f64> {
        lat.arcs().map(|a| a.extra_cost).collect()
    }

    #[test]
    fn chain_has_zero_extra_costs() {
        for beam in [0.0, 0.5, 10.0] {
            let mut lat = chain(6);
            prune_lattice(&mut lat, beam).unwrap();
            assert!(extras(&lat).iter().all(|&e| e.abs() < 1e-12));
            assert_eq!(lat.num_live_arcs(), 6);
        }
    }

    #[test]
    fn diamond_extra_costs() {
        let mut lat = diamond();
        prune_lattice(&mut lat, 1.0).unwrap();
        let e = extras(&lat);
        assert!(e[0].abs() < 1e-6 && e[2].abs() < 1e-6);
        assert!((e[1] - 0.4).abs() < 1e-6 && (e[3] - 0.4).abs() < 1e-6);
        assert_eq!(lat.num_live_arcs(), 4);
        assert!((lat.frame(1).extra[1] - 0.4).abs() < 1e-6);

        let mut lat = diamond();
        prune_lattice(&mut lat, 0.2).unwrap();
        assert_eq!(lat.num_live_arcs(), 2);
        assert!(lat.find_arc(LatticeNodeId::new(0, 0), 1).unwrap().pruned);
    }

    #[test]
    fn infinite_beam_prunes_nothing() {
        let mut lat = diamond();
        // a very costly alternative
        lat.frames_mut()[1].emitting.push(arc((1, 1), (2, 0), 0, 40.0, 9));
        prune_lattice(&mut lat, f64::INFINITY).unwrap();
        assert_eq!(lat.num_live_arcs(), lat.num_arcs());
    }

    #[test]
    fn pruning_is_idempotent() {
        let mut lat = diamond();
        prune_lattice(&mut lat, 0.2).unwrap();
        let once = lat.clone();
        let stats = prune_lattice(&mut lat, 0.2).unwrap();
        assert_eq!(stats.newly_pruned, 0);
        let live = |l: &Lattice| l.arcs().filter(|a| !a.pruned).map(|a| (a.arc_id, a.extra_cost)).collect::<Vec<_>>();
        assert_eq!(live(&once), live(&lat));
    }

    #[test]
    fn epsilon_chain_within_frame() {
        // frame 1: node 0 -eps-> node 1 -eps-> node 2 (final), plus a
        // direct costly eps arc 0 -> 2
        let mut lat = Lattice::new();
        lat.push_frame(vec![0], vec![0.0]);
        lat.push_frame(vec![1, 2, 3], vec![1.0, 1.5, 2.0]);
        lat.set_emitting(0, vec![arc((0, 0), (1, 0), 0, 1.0, 0)]);
        lat.set_epsilon(
            1,
            vec![
                arc((1, 0), (1, 1), 0, 0.5, 1),
                arc((1, 1), (1, 2), 0, 0.5, 2),
                arc((1, 0), (1, 2), 0, 1.3, 3),
            ],
        );
        lat.set_final_costs(vec![None, None, Some(0.0)]);
        prune_lattice(&mut lat, 0.25).unwrap();
        let f1 = lat.frame(1);
        assert!((f1.extra[0]).abs() < 1e-9);
        let direct = lat.find_arc(LatticeNodeId::new(1, 0), 3).unwrap();
        assert!((direct.extra_cost - 0.3).abs() < 1e-6);
        assert!(direct.pruned);
        assert_eq!(lat.num_live_arcs(), 3);
    }

    #[test]
    fn no_path_to_frontier_fails() {
        let mut lat = diamond();
        lat.set_final_costs(vec![None]);
        assert!(matches!(prune_lattice(&mut lat, 1.0), Err(Error::DecodeFailure(_))));
        assert!(matches!(prune_lattice(&mut Lattice::new(), 1.0), Err(Error::DecodeFailure(_))));
    }

    #[test]
    fn repeated_pruning_stops_early() {
        let mut lat = chain(40);
        let first = prune_lattice(&mut lat, 1.0).unwrap();
        assert_eq!(first.frames_visited, 41);
        let second = prune_lattice(&mut lat, 1.0).unwrap();
        assert!(second.frames_visited < 41);
        // a different beam forces a full pass
        let third = prune_lattice(&mut lat, 2.0).unwrap();
        assert_eq!(third.frames_visited, 41);
    }
}
