//! Exact lattices: every beam-surviving token becomes a node, every
//! beam-surviving token pass an arc carrying its exact graph and acoustic
//! costs.
//!
//! Nodes are addressed by `(frame, index)` and never move once created.
//! Pruning marks arcs dead in place; [`finalize_lattice`] compacts the
//! survivors into a [`FinalLattice`].

mod finalize;
mod prune;
mod store;

pub use finalize::{finalize_lattice, read_lattice_text, write_lattice_text, FinalArc, FinalLattice};
pub use prune::{prune_lattice, PruneStats};
pub use store::ShardedArcStore;

use crate::wfst::{ArcId, Label, StateId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeNodeId {
    pub frame: u32,
    pub idx: u32,
}

impl LatticeNodeId {
    pub fn new(frame: usize, idx: usize) -> Self {
        Self {
            frame: frame as u32,
            idx: idx as u32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeArc {
    pub from: LatticeNodeId,
    pub to: LatticeNodeId,
    pub ilabel: Label,
    pub olabel: Label,
    pub graph_cost: f32,
    pub acoustic_cost: f32,
    pub extra_cost: f64,
    pub pruned: bool,
    /// Graph arc this pass went through.
    pub arc_id: ArcId,
}

impl LatticeArc {
    /// Cost of reaching `to` through this arc from a node with forward cost
    /// `fwd`. The decoder accumulates token costs with the same expression.
    #[inline]
    pub fn extend(&self, fwd: f64) -> f64 {
        fwd + self.graph_cost as f64 + self.acoustic_cost as f64
    }
}

/// Nodes of one frame plus the arcs leaving them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatticeFrame {
    /// Graph state of each node.
    pub states: Vec<StateId>,
    /// Forward (token) cost of each node.
    pub fwd: Vec<f64>,
    /// Node extra cost from the last pruning pass.
    pub extra: Vec<f64>,
    /// Arcs into frame + 1, sorted by `(from.idx, arc_id)`.
    pub emitting: Vec<LatticeArc>,
    /// Arcs within this frame, sorted by `(from.idx, arc_id)`.
    pub epsilon: Vec<LatticeArc>,
}

impl LatticeFrame {
    pub fn num_nodes(&self) -> usize {
        self.states.len()
    }

    pub fn arcs(&self) -> impl Iterator<Item = &LatticeArc> {
        self.emitting.iter().chain(self.epsilon.iter())
    }
}

/// Bookkeeping that lets repeated pruning stop early once a frame's node
/// extra costs come out unchanged.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct PruneMemo {
    pub beam: Option<f64>,
    /// Frames (from 0) whose stored extra costs are up to date.
    pub valid_frames: usize,
}

/// A lattice under construction (or fully decoded but not yet compacted).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lattice {
    frames: Vec<LatticeFrame>,
    /// Node index of the start token in frame 0.
    start: u32,
    /// Final costs of the last frame's nodes once decoding is complete.
    /// `None` means the last frame is a live frontier on which any node may
    /// still lead to the best path.
    final_costs: Option<Vec<Option<f32>>>,
    pub(crate) memo: PruneMemo,
}

impl Lattice {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a node frame; returns its index.
    pub fn push_frame(&mut self, states: Vec<StateId>, fwd: Vec<f64>) -> usize {
        assert_eq!(states.len(), fwd.len());
        let n = states.len();
        self.frames.push(LatticeFrame {
            states,
            fwd,
            extra: vec![f64::NAN; n],
            emitting: Vec::new(),
            epsilon: Vec::new(),
        });
        self.final_costs = None;
        self.frames.len() - 1
    }

    pub fn set_emitting(&mut self, frame: usize, mut arcs: Vec<LatticeArc>) {
        sort_arcs(&mut arcs);
        self.frames[frame].emitting = arcs;
    }

    pub fn set_epsilon(&mut self, frame: usize, mut arcs: Vec<LatticeArc>) {
        sort_arcs(&mut arcs);
        self.frames[frame].epsilon = arcs;
    }

    pub fn set_start(&mut self, idx: usize) {
        self.start = idx as u32;
    }

    pub fn start(&self) -> LatticeNodeId {
        LatticeNodeId { frame: 0, idx: self.start }
    }

    /// Marks the last frame as terminal with the given per-node final costs.
    pub fn set_final_costs(&mut self, costs: Vec<Option<f32>>) {
        assert_eq!(costs.len(), self.frames.last().map_or(0, LatticeFrame::num_nodes));
        self.final_costs = Some(costs);
    }

    pub fn final_costs(&self) -> Option<&[Option<f32>]> {
        self.final_costs.as_deref()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[LatticeFrame] {
        &self.frames
    }

    pub fn frame(&self, f: usize) -> &LatticeFrame {
        &self.frames[f]
    }

    pub(crate) fn frames_mut(&mut self) -> &mut [LatticeFrame] {
        &mut self.frames
    }

    pub fn node_state(&self, n: LatticeNodeId) -> StateId {
        self.frames[n.frame as usize].states[n.idx as usize]
    }

    pub fn node_fwd(&self, n: LatticeNodeId) -> f64 {
        self.frames[n.frame as usize].fwd[n.idx as usize]
    }

    pub fn arcs(&self) -> impl Iterator<Item = &LatticeArc> {
        self.frames.iter().flat_map(LatticeFrame::arcs)
    }

    pub fn num_arcs(&self) -> usize {
        self.frames.iter().map(|f| f.emitting.len() + f.epsilon.len()).sum()
    }

    pub fn num_live_arcs(&self) -> usize {
        self.arcs().filter(|a| !a.pruned).count()
    }

    pub fn num_nodes(&self) -> usize {
        self.frames.iter().map(LatticeFrame::num_nodes).sum()
    }

    /// The arc leaving `from` through graph arc `arc_id`, if recorded.
    pub fn find_arc(&self, from: LatticeNodeId, arc_id: ArcId) -> Option<&LatticeArc> {
        let f = self.frames.get(from.frame as usize)?;
        [&f.emitting, &f.epsilon].into_iter().find_map(|arcs| {
            arcs.binary_search_by_key(&(from.idx, arc_id), |a| (a.from.idx, a.arc_id))
                .ok()
                .map(|i| &arcs[i])
        })
    }
}

fn sort_arcs(arcs: &mut [LatticeArc]) {
    arcs.sort_unstable_by_key(|a| (a.from.idx, a.arc_id));
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    pub fn arc(from: (usize, usize), to: (usize, usize), olabel: Label, cost: f32, arc_id: ArcId) -> LatticeArc {
        LatticeArc {
            from: LatticeNodeId::new(from.0, from.1),
            to: LatticeNodeId::new(to.0, to.1),
            ilabel: if from.0 == to.0 { 0 } else { 1 },
            olabel,
            graph_cost: cost,
            acoustic_cost: 0.0,
            extra_cost: f64::INFINITY,
            pruned: false,
            arc_id,
        }
    }

    /// Two paths 0 -> {1,2} -> 3 over two frames, total costs 1.0 (via
    /// words 1) and 1.4 (via word 2).
    pub fn diamond() -> Lattice {
        let mut lat = Lattice::new();
        lat.push_frame(vec![0], vec![0.0]);
        lat.push_frame(vec![1, 2], vec![0.5, 0.9]);
        lat.push_frame(vec![3], vec![1.0]);
        lat.set_emitting(0, vec![arc((0, 0), (1, 0), 1, 0.5, 0), arc((0, 0), (1, 1), 2, 0.9, 1)]);
        lat.set_emitting(1, vec![arc((1, 0), (2, 0), 0, 0.5, 2), arc((1, 1), (2, 0), 0, 0.5, 3)]);
        lat.set_final_costs(vec![Some(0.0)]);
        lat
    }

    /// A single chain of `n` frames.
    pub fn chain(n: usize) -> Lattice {
        let mut lat = Lattice::new();
        for f in 0..=n {
            lat.push_frame(vec![f as StateId], vec![f as f64 * 0.25]);
        }
        for f in 0..n {
            lat.set_emitting(f, vec![arc((f, 0), (f + 1, 0), f as Label + 1, 0.25, f as ArcId)]);
        }
        lat.set_final_costs(vec![Some(0.0)]);
        lat
    }
}
