//! Decoding graph: an immutable transducer with per-state contiguous arc
//! ranges, loaded from the AT&T / OpenFst text convention.

use std::collections::HashMap;
use std::fmt::Write as _;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::error::{Error, Result};

pub type StateId = u32;
pub type ArcId = u32;
pub type Label = u32;

/// Input/output label reserved for epsilon.
pub const EPSILON: Label = 0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arc {
    pub src: StateId,
    pub dst: StateId,
    pub ilabel: Label,
    pub olabel: Label,
    pub weight: f32,
    /// Position in [`Wfst::arcs`].
    pub id: ArcId,
}

impl Arc {
    #[inline]
    pub fn is_emitting(&self) -> bool {
        self.ilabel != EPSILON
    }
}

/// Compressed sparse row index over a subset of arc ids, grouped by source
/// state.
#[derive(Clone, Debug, PartialEq)]
struct ArcIndex {
    offsets: Vec<u32>,
    ids: Vec<ArcId>,
}

impl ArcIndex {
    fn build(num_states: usize, arcs: &[Arc], keep: impl Fn(&Arc) -> bool) -> Self {
        let mut offsets = vec![0u32; num_states + 1];
        let mut ids = Vec::new();
        let mut cursor = 0usize;
        for s in 0..num_states {
            offsets[s] = ids.len() as u32;
            while cursor < arcs.len() && arcs[cursor].src as usize == s {
                if keep(&arcs[cursor]) {
                    ids.push(arcs[cursor].id);
                }
                cursor += 1;
            }
        }
        offsets[num_states] = ids.len() as u32;
        Self { offsets, ids }
    }

    #[inline]
    fn of(&self, s: StateId) -> &[ArcId] {
        let s = s as usize;
        &self.ids[self.offsets[s] as usize..self.offsets[s + 1] as usize]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Wfst {
    num_states: usize,
    start: StateId,
    arc_offsets: Vec<u32>,
    arcs: Vec<Arc>,
    final_costs: Vec<Option<f32>>,
    emitting: ArcIndex,
    epsilon: ArcIndex,
    /// Strongly connected component of each state in the epsilon-only
    /// subgraph.
    eps_component: Vec<u32>,
}

impl Wfst {
    /// Builds a graph from unordered arcs. Arcs are stably sorted by source
    /// and their ids reassigned to match the sorted position.
    pub fn new(
        num_states: usize,
        start: StateId,
        mut arcs: Vec<Arc>,
        finals: impl IntoIterator<Item = (StateId, f32)>,
    ) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::Validation("graph has no states".into()));
        }
        if num_states > u32::MAX as usize || arcs.len() >= u32::MAX as usize {
            return Err(Error::Validation("graph too large for 32-bit ids".into()));
        }
        if start as usize >= num_states {
            return Err(Error::Validation(format!(
                "start state {start} out of range (num_states {num_states})"
            )));
        }
        for a in &arcs {
            if a.src as usize >= num_states || a.dst as usize >= num_states {
                return Err(Error::Validation(format!(
                    "arc {} -> {} references a state >= {num_states}",
                    a.src, a.dst
                )));
            }
            check_weight(a.weight, "arc weight")?;
        }
        let mut final_costs = vec![None; num_states];
        for (s, c) in finals {
            if s as usize >= num_states {
                return Err(Error::Validation(format!("final state {s} out of range")));
            }
            check_weight(c, "final cost")?;
            final_costs[s as usize] = Some(c);
        }
        if final_costs.iter().all(Option::is_none) {
            return Err(Error::Validation("graph has no final state".into()));
        }

        arcs.sort_by_key(|a| a.src);
        let mut arc_offsets = vec![0u32; num_states + 1];
        for (i, a) in arcs.iter_mut().enumerate() {
            a.id = i as ArcId;
            arc_offsets[a.src as usize + 1] += 1;
        }
        for s in 0..num_states {
            arc_offsets[s + 1] += arc_offsets[s];
        }
        if arc_offsets[start as usize] == arc_offsets[start as usize + 1]
            && final_costs[start as usize].is_none()
        {
            return Err(Error::Validation(format!(
                "start state {start} has no arcs and is not final"
            )));
        }

        let emitting = ArcIndex::build(num_states, &arcs, Arc::is_emitting);
        let epsilon = ArcIndex::build(num_states, &arcs, |a| !a.is_emitting());
        let eps_component = epsilon_components(num_states, &arcs);

        Ok(Self {
            num_states,
            start,
            arc_offsets,
            arcs,
            final_costs,
            emitting,
            epsilon,
            eps_component,
        })
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    #[inline]
    pub fn start(&self) -> StateId {
        self.start
    }

    #[inline]
    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    #[inline]
    pub fn arc(&self, id: ArcId) -> &Arc {
        &self.arcs[id as usize]
    }

    pub fn arc_offsets(&self) -> &[u32] {
        &self.arc_offsets
    }

    /// Out-going arcs of `state`, in stored order.
    pub fn out_arcs(&self, state: StateId) -> Result<&[Arc]> {
        if state as usize >= self.num_states {
            return Err(Error::Usage(format!(
                "state {state} out of range (num_states {})",
                self.num_states
            )));
        }
        Ok(self.arcs_of(state))
    }

    /// Unchecked variant of [`Wfst::out_arcs`] for hot loops.
    #[inline]
    pub fn arcs_of(&self, state: StateId) -> &[Arc] {
        let s = state as usize;
        &self.arcs[self.arc_offsets[s] as usize..self.arc_offsets[s + 1] as usize]
    }

    /// Ids of the emitting (non-epsilon input) arcs leaving `state`.
    #[inline]
    pub fn emitting_arcs(&self, state: StateId) -> &[ArcId] {
        self.emitting.of(state)
    }

    /// Ids of the epsilon-input arcs leaving `state`.
    #[inline]
    pub fn epsilon_arcs(&self, state: StateId) -> &[ArcId] {
        self.epsilon.of(state)
    }

    pub fn num_epsilon_arcs(&self) -> usize {
        self.epsilon.ids.len()
    }

    #[inline]
    pub fn final_cost(&self, state: StateId) -> Option<f32> {
        self.final_costs[state as usize]
    }

    pub fn finals(&self) -> impl Iterator<Item = (StateId, f32)> + '_ {
        self.final_costs
            .iter()
            .enumerate()
            .filter_map(|(s, c)| c.map(|c| (s as StateId, c)))
    }

    /// True when `a` and `b` lie on a common cycle of epsilon arcs.
    #[inline]
    pub fn same_epsilon_component(&self, a: StateId, b: StateId) -> bool {
        self.eps_component[a as usize] == self.eps_component[b as usize]
    }

    pub fn max_ilabel(&self) -> Label {
        self.arcs.iter().map(|a| a.ilabel).max().unwrap_or(0)
    }
}

fn check_weight(w: f32, what: &str) -> Result<()> {
    if !w.is_finite() {
        return Err(Error::Validation(format!("{what} {w} is not finite")));
    }
    if w < 0.0 {
        return Err(Error::Validation(format!("{what} {w} is negative")));
    }
    Ok(())
}

fn epsilon_components(num_states: usize, arcs: &[Arc]) -> Vec<u32> {
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(num_states, 0);
    for _ in 0..num_states {
        g.add_node(());
    }
    for a in arcs.iter().filter(|a| !a.is_emitting()) {
        g.add_edge(NodeIndex::new(a.src as usize), NodeIndex::new(a.dst as usize), ());
    }
    let mut comp = vec![0u32; num_states];
    for (c, members) in tarjan_scc(&g).into_iter().enumerate() {
        for n in members {
            comp[n.index()] = c as u32;
        }
    }
    comp
}

/// Parses the textual graph format.
///
/// Each non-blank line is either an arc `src dst ilabel olabel [weight]` or a
/// final state `state [final_cost]`. The first line's leading state is the
/// start state.
pub fn load_wfst_text(text: &str) -> Result<Wfst> {
    let mut arcs = Vec::new();
    let mut finals = Vec::new();
    let mut start = None;
    let mut max_state: Option<StateId> = None;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let uint = |i: usize, what: &str| -> Result<u32> {
            fields[i]
                .parse::<u32>()
                .map_err(|_| Error::parse(lineno, format!("{what} `{}` is not a non-negative integer", fields[i])))
        };
        let real = |i: usize, what: &str| -> Result<f32> {
            let v = fields[i]
                .parse::<f32>()
                .map_err(|_| Error::parse(lineno, format!("{what} `{}` is not a number", fields[i])))?;
            if !v.is_finite() {
                return Err(Error::Validation(format!("line {lineno}: {what} {v} is not finite")));
            }
            if v < 0.0 {
                return Err(Error::Validation(format!("line {lineno}: {what} {v} is negative")));
            }
            Ok(v)
        };
        match fields.len() {
            1 | 2 => {
                let s = uint(0, "state")?;
                let c = if fields.len() == 2 { real(1, "final cost")? } else { 0.0 };
                start.get_or_insert(s);
                max_state = max_state.max(Some(s));
                finals.push((s, c));
            }
            4 | 5 => {
                let src = uint(0, "source state")?;
                let dst = uint(1, "destination state")?;
                let ilabel = uint(2, "input label")?;
                let olabel = uint(3, "output label")?;
                let weight = if fields.len() == 5 { real(4, "weight")? } else { 0.0 };
                start.get_or_insert(src);
                max_state = max_state.max(Some(src.max(dst)));
                arcs.push(Arc {
                    src,
                    dst,
                    ilabel,
                    olabel,
                    weight,
                    id: 0,
                });
            }
            n => {
                return Err(Error::parse(
                    lineno,
                    format!("expected 1, 2, 4 or 5 fields, found {n}"),
                ))
            }
        }
    }

    let Some(start) = start else {
        return Err(Error::Validation("empty graph text".into()));
    };
    let num_states = max_state.map_or(0, |m| m as usize + 1);
    Wfst::new(num_states, start, arcs, finals)
}

/// Serializes a graph so that [`load_wfst_text`] reproduces it: start-state
/// arcs first, then the remaining arcs by source, then final states.
pub fn write_wfst_text(wfst: &Wfst) -> String {
    let mut out = String::new();
    let line = |out: &mut String, a: &Arc| {
        let _ = writeln!(out, "{} {} {} {} {}", a.src, a.dst, a.ilabel, a.olabel, a.weight);
    };
    let start_arcs = wfst.arcs_of(wfst.start);
    if start_arcs.is_empty() {
        // start is final (checked at construction)
        let _ = writeln!(out, "{} {}", wfst.start, wfst.final_cost(wfst.start).unwrap_or(0.0));
    }
    for a in start_arcs {
        line(&mut out, a);
    }
    for a in wfst.arcs.iter().filter(|a| a.src != wfst.start) {
        line(&mut out, a);
    }
    for (s, c) in wfst.finals() {
        if start_arcs.is_empty() && s == wfst.start {
            continue;
        }
        let _ = writeln!(out, "{s} {c}");
    }
    out
}

/// Word symbols for printing output labels (`word<TAB>id` per line).
#[derive(Clone, Debug, Default)]
pub struct SymbolTable {
    by_id: HashMap<Label, String>,
    by_word: HashMap<String, Label>,
}

impl SymbolTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 2 {
                return Err(Error::parse(lineno + 1, "expected `word id`"));
            }
            let id = fields[1]
                .parse::<Label>()
                .map_err(|_| Error::parse(lineno + 1, format!("bad symbol id `{}`", fields[1])))?;
            table.by_id.insert(id, fields[0].to_string());
            table.by_word.insert(fields[0].to_string(), id);
        }
        Ok(table)
    }

    pub fn word(&self, id: Label) -> Option<&str> {
        self.by_id.get(&id).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<Label> {
        self.by_word.get(word).copied()
    }

    pub fn render(&self, ids: &[Label]) -> String {
        ids.iter()
            .map(|&i| self.word(i).map_or_else(|| i.to_string(), str::to_string))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
