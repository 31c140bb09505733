//! Seeded generators for random test instances and benchmark workloads.

use rand::Rng;

use crate::acoustics::CostMatrix;
use crate::wfst::{Arc, Label, StateId, Wfst};

#[derive(Clone, Copy, Debug)]
pub struct InstanceShape {
    pub max_states: usize,
    pub max_arcs: usize,
    pub max_frames: usize,
    pub max_labels: usize,
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self { max_states: 50, max_arcs: 200, max_frames: 20, max_labels: 8 }
    }
}

fn arc(src: usize, dst: usize, ilabel: Label, olabel: Label, weight: f32) -> Arc {
    Arc { src: src as StateId, dst: dst as StateId, ilabel, olabel, weight, id: 0 }
}

/// A small random graph with epsilon arcs (sometimes cyclic) and a matching
/// cost matrix. Every state has at least one emitting arc.
pub fn random_instance<R: Rng>(rng: &mut R, shape: InstanceShape) -> (Wfst, CostMatrix) {
    let n = rng.gen_range(2..=shape.max_states.max(2));
    let d = rng.gen_range(1..=shape.max_labels.max(1));
    let num_arcs = rng.gen_range(n..=shape.max_arcs.max(n));
    let word = |rng: &mut R| if rng.gen_bool(0.5) { 0 } else { rng.gen_range(1..=20) };

    let mut arcs = Vec::with_capacity(num_arcs);
    for s in 0..n {
        let (il, ol) = (rng.gen_range(1..=d as Label), word(rng));
        arcs.push(arc(s, rng.gen_range(0..n), il, ol, rng.gen_range(0.0..4.0)));
    }
    if num_arcs - arcs.len() >= 2 && rng.gen_bool(0.3) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        arcs.push(arc(a, b, 0, 0, 0.0));
        arcs.push(arc(b, a, 0, 0, 0.0));
    }
    while arcs.len() < num_arcs {
        let il = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(1..=d as Label) };
        let ol = word(rng);
        arcs.push(arc(rng.gen_range(0..n), rng.gen_range(0..n), il, ol, rng.gen_range(0.0..4.0)));
    }

    let mut finals = Vec::new();
    for s in 0..n {
        if rng.gen_bool(0.3) {
            finals.push((s as StateId, rng.gen_range(0.0..2.0)));
        }
    }
    if finals.is_empty() {
        finals.push((rng.gen_range(0..n) as StateId, 0.0));
    }
    let wfst = Wfst::new(n, 0, arcs, finals).expect("generated graph is valid");

    let t = rng.gen_range(1..=shape.max_frames.max(1));
    let lo = if rng.gen_bool(0.2) { -2.0 } else { 0.0 };
    (wfst, random_costs(rng, t, d, lo..lo + 6.0))
}

pub fn random_costs<R: Rng>(rng: &mut R, frames: usize, labels: usize, range: std::ops::Range<f32>) -> CostMatrix {
    let costs = (0..frames * labels).map(|_| rng.gen_range(range.clone())).collect();
    CostMatrix::new(frames, labels, costs).expect("generated matrix is valid")
}

/// Benchmark graph with `num_states` states and `num_arcs` arcs over `labels`
/// input labels. In the skewed variant state 0 owns 30% of all arcs and a
/// tenth of the other arcs lead back to it.
pub fn bench_graph<R: Rng>(rng: &mut R, num_states: usize, num_arcs: usize, labels: usize, skewed: bool) -> Wfst {
    let n = num_states.max(2);
    let hub_arcs = if skewed { num_arcs * 3 / 10 } else { 0 };
    let mut arcs = Vec::with_capacity(num_arcs);
    let emit = |rng: &mut R, src: usize, dst: usize| {
        let ol = if rng.gen_bool(0.1) { rng.gen_range(1..1000) } else { 0 };
        arc(src, dst, rng.gen_range(1..=labels as Label), ol, rng.gen_range(0.0..3.0))
    };
    for _ in 0..hub_arcs {
        let dst = rng.gen_range(1..n);
        arcs.push(emit(rng, 0, dst));
    }
    let rest = num_arcs - hub_arcs;
    for i in 0..rest {
        let src = if skewed { 1 + i % (n - 1) } else { i % n };
        let dst = if skewed && rng.gen_bool(0.1) { 0 } else { rng.gen_range(0..n) };
        if rng.gen_bool(0.03) {
            arcs.push(arc(src, dst, 0, 0, rng.gen_range(0.5..3.0)));
        } else {
            arcs.push(emit(rng, src, dst));
        }
    }
    let finals = (0..n).map(|s| (s as StateId, rng.gen_range(0.0..5.0)));
    Wfst::new(n, 0, arcs, finals).expect("generated graph is valid")
}

/// A benchmark graph and a set of utterances to decode on it.
pub struct Workload {
    pub wfst: Wfst,
    pub utterances: Vec<CostMatrix>,
}

pub const BENCH_LABELS: usize = 200;

/// `num_arcs` arcs over `num_arcs / 20` states, and `utterances` cost
/// matrices of `frames` frames each.
pub fn bench_workload<R: Rng>(rng: &mut R, num_arcs: usize, frames: usize, utterances: usize, skewed: bool) -> Workload {
    let wfst = bench_graph(rng, (num_arcs / 20).max(2), num_arcs, BENCH_LABELS, skewed);
    let utterances = (0..utterances)
        .map(|_| random_costs(rng, frames, BENCH_LABELS, 0.0..12.0))
        .collect();
    Workload { wfst, utterances }
}
