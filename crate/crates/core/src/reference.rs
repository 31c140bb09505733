//! Single-threaded oracles. Nothing here shares search code with the
//! parallel decoder; only the data types are common.

use std::collections::{BTreeMap, VecDeque};

use crate::acoustics::CostMatrix;
use crate::config::DecodeConfig;
use crate::decoder::{DecodeResult, DecodeStats};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, LatticeArc, LatticeNodeId};
use crate::wfst::{ArcId, Label, StateId, Wfst};

#[derive(Clone, Copy, Debug)]
struct Tok {
    cost: f64,
    /// Arc that produced the token; `None` for the start token.
    arc: Option<ArcId>,
}

type Frame = BTreeMap<StateId, Tok>;

/// Textbook Viterbi beam search with an ordered map per frame and a queue
/// for the epsilon closure. The returned lattice is raw (not pruned).
pub fn serial_decode(wfst: &Wfst, m: &CostMatrix, cfg: &DecodeConfig) -> Result<DecodeResult> {
    cfg.validate()?;
    if wfst.max_ilabel() as usize > m.num_labels() {
        return Err(Error::Usage("graph input labels exceed the cost matrix width".into()));
    }
    let scale = cfg.acoustic_scale;

    let mut first = Frame::new();
    first.insert(wfst.start(), Tok { cost: 0.0, arc: None });
    let mut cutoffs = vec![cfg.beam];
    epsilon_closure(wfst, &mut first, cfg.beam);
    let mut frames = vec![first];

    for t in 0..m.num_frames() {
        let prev = frames.last().unwrap();
        let mut next = Frame::new();
        for (&s, tok) in prev {
            for a in wfst.arcs_of(s).iter().filter(|a| a.ilabel != 0) {
                let cost = tok.cost + a.weight as f64 + m.acoustic_cost(t, a.ilabel, scale)? as f64;
                let better = next.get(&a.dst).is_none_or(|old| cost < old.cost);
                if better {
                    next.insert(a.dst, Tok { cost, arc: Some(a.id) });
                }
            }
        }
        let best = next.values().map(|t| t.cost).fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            return Err(Error::DecodeFailure(format!("no tokens survived at frame {}", t + 1)));
        }
        let cutoff = best + cfg.beam;
        next.retain(|_, tok| tok.cost <= cutoff);
        epsilon_closure(wfst, &mut next, cutoff);
        frames.push(next);
        cutoffs.push(cutoff);
    }

    let last = frames.last().unwrap();
    let mut totals: Vec<(f64, StateId)> = last
        .iter()
        .filter_map(|(&s, tok)| wfst.final_cost(s).map(|c| (tok.cost + c as f64, s)))
        .collect();
    totals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let partial = totals.is_empty();
    let (cost, best_state, runner_up) = if partial {
        let (&s, tok) = last
            .iter()
            .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost))
            .ok_or_else(|| Error::DecodeFailure("empty last frame".into()))?;
        (tok.cost, s, None)
    } else {
        (totals[0].0, totals[0].1, totals.get(1).map(|t| t.0))
    };

    let (words, alignment, path) = trace_back(wfst, &frames, best_state)?;
    let lattice = raw_lattice(wfst, m, cfg, &frames, &cutoffs, partial);
    let index = |f: usize, s: StateId| frames[f].keys().position(|&k| k == s).unwrap();
    let best_path = path.iter().map(|&(f, s, a)| (LatticeNodeId::new(f, index(f, s)), a)).collect();

    Ok(DecodeResult {
        words,
        alignment,
        cost,
        runner_up,
        partial,
        lattice,
        best_path,
        num_frames: m.num_frames(),
        trace: None,
        stats: DecodeStats::default(),
    })
}

fn epsilon_closure(wfst: &Wfst, frame: &mut Frame, cutoff: f64) {
    let mut queue: VecDeque<StateId> = frame.keys().copied().collect();
    while let Some(s) = queue.pop_front() {
        let cost = frame[&s].cost;
        for a in wfst.arcs_of(s).iter().filter(|a| a.ilabel == 0) {
            let c = cost + a.weight as f64;
            if c > cutoff {
                continue;
            }
            if frame.get(&a.dst).is_none_or(|old| c < old.cost) {
                frame.insert(a.dst, Tok { cost: c, arc: Some(a.id) });
                queue.push_back(a.dst);
            }
        }
    }
}

type Path = Vec<(usize, StateId, ArcId)>;

fn trace_back(wfst: &Wfst, frames: &[Frame], end: StateId) -> Result<(Vec<Label>, Vec<(Label, usize)>, Path)> {
    let mut f = frames.len() - 1;
    let mut s = end;
    let (mut words, mut align, mut path) = (Vec::new(), Vec::new(), Vec::new());
    let limit: usize = frames.iter().map(BTreeMap::len).sum();
    for _ in 0..=limit {
        let tok = frames[f][&s];
        let Some(id) = tok.arc else {
            words.reverse();
            align.reverse();
            path.reverse();
            return Ok((words, align, path));
        };
        let a = wfst.arc(id);
        if a.olabel != 0 {
            words.push(a.olabel);
        }
        if a.ilabel != 0 {
            f -= 1;
            align.push((a.ilabel, f));
        }
        path.push((f, a.src, id));
        s = a.src;
    }
    Err(Error::Invariant("reference backtrace loops".into()))
}

fn raw_lattice(wfst: &Wfst, m: &CostMatrix, cfg: &DecodeConfig, frames: &[Frame], cutoffs: &[f64], partial: bool) -> Lattice {
    let mut lat = Lattice::new();
    let pos: Vec<BTreeMap<StateId, usize>> =
        frames.iter().map(|f| f.keys().enumerate().map(|(i, &s)| (s, i)).collect()).collect();
    for f in frames {
        lat.push_frame(f.keys().copied().collect(), f.values().map(|t| t.cost).collect());
    }
    let node = |f: usize, s: StateId| LatticeNodeId::new(f, pos[f][&s]);
    let mk = |from, to, a: &crate::wfst::Arc, ac: f32| LatticeArc {
        from,
        to,
        ilabel: a.ilabel,
        olabel: a.olabel,
        graph_cost: a.weight,
        acoustic_cost: ac,
        extra_cost: f64::INFINITY,
        pruned: false,
        arc_id: a.id,
    };
    for (f, frame) in frames.iter().enumerate() {
        let mut eps = Vec::new();
        let mut emit = Vec::new();
        for (&s, tok) in frame {
            for a in wfst.arcs_of(s) {
                if a.ilabel == 0 {
                    let c = tok.cost + a.weight as f64;
                    let keep = c <= cutoffs[f]
                        && frame.contains_key(&a.dst)
                        && (!wfst.same_epsilon_component(a.src, a.dst) || frame[&a.dst].arc == Some(a.id));
                    if keep {
                        eps.push(mk(node(f, s), node(f, a.dst), a, 0.0));
                    }
                } else if f + 1 < frames.len() {
                    let ac = m.scaled(f, a.ilabel, cfg.acoustic_scale);
                    let c = tok.cost + a.weight as f64 + ac as f64;
                    if c <= cutoffs[f + 1] && frames[f + 1].contains_key(&a.dst) {
                        emit.push(mk(node(f, s), node(f + 1, a.dst), a, ac));
                    }
                }
            }
        }
        lat.set_emitting(f, emit);
        lat.set_epsilon(f, eps);
    }
    let last = frames.last().unwrap();
    lat.set_final_costs(
        last.keys()
            .map(|&s| if partial { Some(0.0) } else { wfst.final_cost(s) })
            .collect(),
    );
    lat
}

/// Extra cost of every arc of `lat`, in [`Lattice::arcs`] order, by forward
/// and backward dynamic programming over a topological order. Pruned flags
/// are ignored.
///
/// With final costs set, path ends are the final nodes. On a live frontier
/// every last-frame node `v` ends a path with terminal cost `-fwd(v)`, so
/// each frontier node counts as a best path end.
pub fn brute_force_extra_costs(lat: &Lattice) -> Result<Vec<f64>> {
    let frames = lat.frames();
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let mut offset = vec![0usize];
    for f in frames {
        offset.push(offset.last().unwrap() + f.num_nodes());
    }
    let n = *offset.last().unwrap();
    let id = |x: LatticeNodeId| offset[x.frame as usize] + x.idx as usize;
    let arcs: Vec<&LatticeArc> = lat.arcs().collect();
    let cost = |a: &LatticeArc| a.graph_cost as f64 + a.acoustic_cost as f64;

    let mut out_arcs = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for (k, a) in arcs.iter().enumerate() {
        out_arcs[id(a.from)].push(k);
        indeg[id(a.to)] += 1;
    }
    let mut order: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for &k in &out_arcs[v] {
            let w = id(arcs[k].to);
            indeg[w] -= 1;
            if indeg[w] == 0 {
                order.push(w);
            }
        }
    }
    if order.len() != n {
        return Err(Error::Usage("lattice is cyclic".into()));
    }

    let mut fwd = vec![f64::INFINITY; n];
    fwd[id(lat.start())] = 0.0;
    for &v in &order {
        for &k in &out_arcs[v] {
            let w = id(arcs[k].to);
            fwd[w] = fwd[w].min(fwd[v] + cost(arcs[k]));
        }
    }

    let last = frames.len() - 1;
    let mut bwd = vec![f64::INFINITY; n];
    let mut best_total = f64::INFINITY;
    for i in 0..frames[last].num_nodes() {
        let v = offset[last] + i;
        let term = match lat.final_costs() {
            Some(c) => c[i].map_or(f64::INFINITY, f64::from),
            None if fwd[v].is_finite() => -fwd[v],
            None => f64::INFINITY,
        };
        bwd[v] = term;
        best_total = best_total.min(fwd[v] + term);
    }
    for &v in order.iter().rev() {
        for &k in &out_arcs[v] {
            let w = id(arcs[k].to);
            bwd[v] = bwd[v].min(cost(arcs[k]) + bwd[w]);
        }
    }
    Ok(arcs
        .iter()
        .map(|a| fwd[id(a.from)] + cost(a) + bwd[id(a.to)] - best_total)
        .collect())
}
