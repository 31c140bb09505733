//! Compaction of a pruned lattice and its text format.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::{Lattice, LatticeArc};
use crate::error::{Error, Result};
use crate::wfst::Label;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinalArc {
    pub from: u32,
    pub to: u32,
    pub ilabel: Label,
    pub olabel: Label,
    pub graph_cost: f32,
    pub acoustic_cost: f32,
}

impl FinalArc {
    pub fn cost(&self) -> f64 {
        self.graph_cost as f64 + self.acoustic_cost as f64
    }
}

/// A compacted, densely numbered lattice.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinalLattice {
    pub num_nodes: u32,
    pub start: u32,
    /// `(node, final cost)`, ascending by node.
    pub finals: Vec<(u32, f32)>,
    /// Sorted by source node.
    pub arcs: Vec<FinalArc>,
}

impl FinalLattice {
    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    /// Kahn topological order of the nodes; errors on a cycle.
    pub fn topological_order(&self) -> Result<Vec<u32>> {
        let n = self.num_nodes as usize;
        let mut indeg = vec![0usize; n];
        let mut out: Vec<Vec<u32>> = vec![Vec::new(); n];
        for a in &self.arcs {
            indeg[a.to as usize] += 1;
            out[a.from as usize].push(a.to);
        }
        let mut order: Vec<u32> = (0..n as u32).filter(|&v| indeg[v as usize] == 0).collect();
        let mut head = 0;
        while head < order.len() {
            let v = order[head] as usize;
            head += 1;
            for &w in &out[v] {
                indeg[w as usize] -= 1;
                if indeg[w as usize] == 0 {
                    order.push(w);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Usage("lattice contains a cycle".into()));
        }
        Ok(order)
    }
}

/// Gathers the surviving arcs into one array and renumbers the nodes they
/// reference densely in `(frame, index)` order. Nodes no surviving arc
/// touches disappear here.
pub fn finalize_lattice(lat: &Lattice) -> Result<FinalLattice> {
    let frames = lat.frames();
    if frames.is_empty() {
        return Err(Error::DecodeFailure("empty lattice".into()));
    }
    let last = frames.len() - 1;

    let live: Vec<Vec<LatticeArc>> = frames
        .par_iter()
        .map(|f| f.arcs().filter(|a| !a.pruned).copied().collect())
        .collect();
    if live.iter().all(Vec::is_empty) {
        return Err(Error::DecodeFailure("no lattice arcs survived pruning".into()));
    }

    let mut referenced: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.num_nodes()]).collect();
    let start = lat.start();
    referenced[0][start.idx as usize] = true;
    for a in live.iter().flatten() {
        referenced[a.from.frame as usize][a.from.idx as usize] = true;
        referenced[a.to.frame as usize][a.to.idx as usize] = true;
    }

    let mut ids: Vec<Vec<u32>> = Vec::with_capacity(frames.len());
    let mut next = 0u32;
    for r in &referenced {
        ids.push(
            r.iter()
                .map(|&used| {
                    if used {
                        next += 1;
                        next - 1
                    } else {
                        u32::MAX
                    }
                })
                .collect(),
        );
    }
    let id = |n: super::LatticeNodeId| ids[n.frame as usize][n.idx as usize];

    let final_costs: Vec<Option<f32>> = match lat.final_costs() {
        Some(c) => c.to_vec(),
        None => vec![Some(0.0); frames[last].num_nodes()],
    };
    let finals: Vec<(u32, f32)> = final_costs
        .iter()
        .enumerate()
        .filter(|(i, c)| c.is_some() && referenced[last][*i])
        .map(|(i, c)| (ids[last][i], c.unwrap()))
        .collect();
    if finals.is_empty() {
        return Err(Error::DecodeFailure("no final node survived pruning".into()));
    }

    let mut arcs: Vec<(u32, u32, FinalArc)> = live
        .into_iter()
        .flatten()
        .map(|a| {
            (
                id(a.from),
                a.arc_id,
                FinalArc {
                    from: id(a.from),
                    to: id(a.to),
                    ilabel: a.ilabel,
                    olabel: a.olabel,
                    graph_cost: a.graph_cost,
                    acoustic_cost: a.acoustic_cost,
                },
            )
        })
        .collect();
    arcs.sort_unstable_by_key(|&(from, arc_id, _)| (from, arc_id));

    Ok(FinalLattice {
        num_nodes: next,
        start: id(start),
        finals,
        arcs: arcs.into_iter().map(|(_, _, a)| a).collect(),
    })
}

/// ```text
/// NODES n ARCS m START s
/// F node final_cost          (one per final node, ascending)
/// A from to ilabel olabel graph_cost acoustic_cost
/// ```
pub fn write_lattice_text(lat: &FinalLattice) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "NODES {} ARCS {} START {}", lat.num_nodes, lat.arcs.len(), lat.start);
    for (n, c) in &lat.finals {
        let _ = writeln!(out, "F {n} {c}");
    }
    for a in &lat.arcs {
        let _ = writeln!(
            out,
            "A {} {} {} {} {} {}",
            a.from, a.to, a.ilabel, a.olabel, a.graph_cost, a.acoustic_cost
        );
    }
    out
}

pub fn read_lattice_text(text: &str) -> Result<FinalLattice> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 6 || h[0] != "NODES" || h[2] != "ARCS" || h[4] != "START" {
        return Err(Error::parse(1, "expected `NODES n ARCS m START s`"));
    }
    let num = |s: &str, line: usize| s.parse::<u32>().map_err(|_| Error::parse(line, format!("bad integer `{s}`")));
    let real = |s: &str, line: usize| {
        s.parse::<f32>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::parse(line, format!("bad cost `{s}`")))
    };
    let num_nodes = num(h[1], 1)?;
    let num_arcs = num(h[3], 1)? as usize;
    let start = num(h[5], 1)?;
    if start >= num_nodes {
        return Err(Error::parse(1, "start node out of range"));
    }
    let node = |s: &str, line: usize| {
        let v = num(s, line)?;
        if v >= num_nodes {
            return Err(Error::parse(line, format!("node {v} out of range")));
        }
        Ok(v)
    };

    let mut lat = FinalLattice { num_nodes, start, ..Default::default() };
    for (i, line) in lines {
        let lineno = i + 1;
        let f: Vec<&str> = line.split_whitespace().collect();
        match (f[0], f.len()) {
            ("F", 3) => lat.finals.push((node(f[1], lineno)?, real(f[2], lineno)?)),
            ("A", 7) => lat.arcs.push(FinalArc {
                from: node(f[1], lineno)?,
                to: node(f[2], lineno)?,
                ilabel: num(f[3], lineno)?,
                olabel: num(f[4], lineno)?,
                graph_cost: real(f[5], lineno)?,
                acoustic_cost: real(f[6], lineno)?,
            }),
            _ => return Err(Error::parse(lineno, "expected an `F` or `A` line")),
        }
    }
    if lat.arcs.len() != num_arcs {
        return Err(Error::parse(1, format!("header declares {num_arcs} arcs, found {}", lat.arcs.len())));
    }
    Ok(lat)
}
