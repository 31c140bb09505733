//! Frame-synchronous parallel token passing.
//!
//! Each frame runs as a sequence of data-parallel passes over the worker
//! pool:
//!
//! 1. emitting expansion of the previous frame's tokens, recombined by
//!    atomic min on packed `(cost, arc id)` words, with an adaptive cutoff;
//! 2. epsilon rounds: states improved in the previous round relax their
//!    epsilon arcs until nothing improves;
//! 3. aggregation into a token list ordered by state id;
//! 4. recording of this frame's lattice arcs into the sharded store.
//!
//! Packed costs are 32-bit and taken relative to the sum of per-frame
//! acoustic floors so they stay non-negative; token costs are kept in `f64`
//! in original units.

mod frame;
mod packed;

pub use frame::{FrameState, Winner};
pub use packed::{monotone_decode, monotone_encode, pack, unpack, AtomicPacked, PackedToken, NO_ARC};

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::acoustics::CostMatrix;
use crate::config::DecodeConfig;
use crate::error::{Error, Result};
use crate::lattice::{finalize_lattice, prune_lattice, FinalLattice, Lattice, LatticeArc, LatticeNodeId, ShardedArcStore};
use crate::scheduler::{run_pass, PassShape};
use crate::wfst::{ArcId, Label, StateId, Wfst};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Token {
    pub state: StateId,
    pub cost: f64,
    pub pred_arc: Option<ArcId>,
    /// Predecessor token index: in the previous frame when `pred_arc` is
    /// emitting, in the same frame when it is an epsilon arc.
    pub pred_token: Option<u32>,
}

#[derive(Clone, Debug, Default)]
pub struct DecodeStats {
    pub token_passing: Duration,
    pub lattice_pruning: Duration,
    pub other: Duration,
    pub prune_runs: usize,
    pub epsilon_rounds: usize,
    pub max_tokens: usize,
    pub lattice_arcs: usize,
    /// Most writes any per-arc predecessor slot received within one pass.
    /// Only collected with `DecodeConfig::instrument`.
    pub max_slot_writes: Option<u32>,
}

#[derive(Clone, Debug)]
pub struct DecodeResult {
    pub words: Vec<Label>,
    /// `(ilabel, frame)` for every emitting arc on the best path.
    pub alignment: Vec<(Label, usize)>,
    /// Best path cost including the final cost.
    pub cost: f64,
    /// Second best total over distinct final tokens.
    pub runner_up: Option<f64>,
    /// No token reached a final state; the best last-frame token was used.
    pub partial: bool,
    pub lattice: Lattice,
    /// Lattice arcs of the best path as `(source node, graph arc)`.
    pub best_path: Vec<(LatticeNodeId, ArcId)>,
    pub num_frames: usize,
    /// Winning packed token of every surviving state, per lattice frame.
    pub trace: Option<Vec<Vec<(StateId, PackedToken)>>>,
    pub stats: DecodeStats,
}

impl DecodeResult {
    pub fn final_lattice(&self) -> Result<FinalLattice> {
        finalize_lattice(&self.lattice)
    }
}

/// A decoder bound to a worker pool of `cfg.num_workers` threads.
pub struct Engine {
    cfg: DecodeConfig,
    pool: rayon::ThreadPool,
}

impl Engine {
    pub fn new(cfg: DecodeConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.num_workers)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
        Ok(Self { cfg, pool })
    }

    pub fn config(&self) -> &DecodeConfig {
        &self.cfg
    }

    pub fn decode(&self, wfst: &Wfst, m: &CostMatrix) -> Result<DecodeResult> {
        self.pool.install(|| run(wfst, m, &self.cfg))
    }

    /// Decodes independent utterances concurrently on the shared pool.
    pub fn decode_batch(&self, wfst: &Wfst, mats: &[CostMatrix]) -> Vec<Result<DecodeResult>> {
        self.pool.install(|| mats.par_iter().map(|m| run(wfst, m, &self.cfg)).collect())
    }
}

pub fn decode_utterance(wfst: &Wfst, m: &CostMatrix, cfg: &DecodeConfig) -> Result<DecodeResult> {
    Engine::new(cfg.clone())?.decode(wfst, m)
}

/// A token pass that survived the running cutoff, before its endpoints are
/// resolved to lattice nodes.
#[derive(Clone, Copy, Debug)]
struct PendingArc {
    from: u32,
    to_state: StateId,
    arc_id: ArcId,
    cost: f64,
    acoustic: f32,
    epsilon: bool,
}

/// One new lattice frame plus the arcs leading into it.
struct FrameOutput {
    states: Vec<StateId>,
    fwd: Vec<f64>,
    emitting: Vec<LatticeArc>,
    epsilon: Vec<LatticeArc>,
}

/// Cost key packed into the token word.
#[inline]
fn key_of(cost: f64, floor: f64) -> f32 {
    (cost - floor).max(0.0) as f32
}

struct Search<'a> {
    wfst: &'a Wfst,
    m: &'a CostMatrix,
    cfg: &'a DecodeConfig,
    shape: PassShape,
    fs: FrameState,
    store: ShardedArcStore<PendingArc>,
    history: Vec<Vec<Token>>,
    /// Sum of acoustic floors up to the current frame.
    floor: f64,
    trace: Option<Vec<Vec<(StateId, PackedToken)>>>,
    stats: DecodeStats,
}

impl<'a> Search<'a> {
    fn new(wfst: &'a Wfst, m: &'a CostMatrix, cfg: &'a DecodeConfig) -> Self {
        let shard_cap = wfst.num_arcs().clamp(1, cfg.max_lattice_arcs);
        Self {
            wfst,
            m,
            cfg,
            shape: PassShape {
                kind: cfg.scheduler,
                workers: cfg.num_workers,
                group_size: cfg.group_size,
            },
            fs: FrameState::new(wfst.num_states(), wfst.num_arcs(), cfg.instrument),
            store: ShardedArcStore::new(cfg.num_shards, shard_cap),
            history: Vec::new(),
            floor: 0.0,
            trace: cfg.trace_packs.then(Vec::new),
            stats: DecodeStats::default(),
        }
    }

    fn note_writes(&mut self) {
        if let Some(w) = self.fs.max_arc_writes() {
            let m = self.stats.max_slot_writes.get_or_insert(0);
            *m = (*m).max(w);
            self.fs.reset_write_counts();
        }
    }

    /// Lattice frame 0: the start token and its epsilon closure.
    fn start(&mut self) -> Result<FrameOutput> {
        self.fs.begin_frame(1);
        self.fs.seed(self.wfst.start());
        self.close_frame(0)
    }

    /// Consumes acoustic frame `t`, producing lattice frame `t + 1`.
    fn advance(&mut self, t: usize) -> Result<FrameOutput> {
        let started = Instant::now();
        self.fs.begin_frame(t as u32 + 2);
        let floor = self.floor + self.m.frame_floor(t, self.cfg.acoustic_scale) as f64;
        let (wfst, m, fs, store) = (self.wfst, self.m, &self.fs, &self.store);
        let (beam, scale) = (self.cfg.beam, self.cfg.acoustic_scale);
        let prev = self.history.last().expect("start frame exists");

        run_pass(
            self.shape,
            prev.len(),
            |i| wfst.emitting_arcs(prev[i].state).len(),
            |w, i, range| {
                let tok = &prev[i];
                let mut limit = key_of(fs.best_cost() + beam, floor);
                for &id in &wfst.emitting_arcs(tok.state)[range] {
                    let arc = wfst.arc(id);
                    let ac = m.scaled(t, arc.ilabel, scale);
                    let cost = tok.cost + arc.weight as f64 + ac as f64;
                    let key = key_of(cost, floor);
                    if key > limit {
                        continue;
                    }
                    fs.observe_cost(cost);
                    limit = limit.min(key_of(cost + beam, floor));
                    fs.recombine(key, cost, arc, i as u32);
                    store.push(
                        w,
                        PendingArc { from: i as u32, to_state: arc.dst, arc_id: id, cost, acoustic: ac, epsilon: false },
                    )?;
                }
                Ok(())
            },
        )?;
        self.note_writes();
        self.floor = floor;
        let out = self.close_frame(t + 1);
        self.stats.token_passing += started.elapsed();
        out
    }

    /// Epsilon rounds, aggregation and lattice arc recording for the frame
    /// whose emitting pass (or seed) has just completed.
    fn close_frame(&mut self, frame: usize) -> Result<FrameOutput> {
        let best = self.fs.best_cost();
        if !best.is_finite() {
            return Err(Error::DecodeFailure(format!("no tokens survived at frame {frame}")));
        }
        let cutoff = best + self.cfg.beam;
        let key_cut = key_of(cutoff, self.floor);
        let mut frontier = self.fs.reset_over_cutoff(key_cut)?;

        let cap = self.wfst.num_states() + 1;
        let mut rounds = 0;
        if self.wfst.num_epsilon_arcs() > 0 {
            while !frontier.is_empty() {
                rounds += 1;
                if rounds > cap {
                    return Err(Error::Invariant(format!(
                        "epsilon closure at frame {frame} did not settle within {cap} rounds"
                    )));
                }
                let (wfst, fs, floor) = (self.wfst, &self.fs, self.floor);
                let front = &frontier;
                run_pass(
                    self.shape,
                    front.len(),
                    |i| wfst.epsilon_arcs(front[i].0).len(),
                    |_, i, range| {
                        let (s, c) = front[i];
                        for &id in &wfst.epsilon_arcs(s)[range] {
                            let arc = wfst.arc(id);
                            let cost = c + arc.weight as f64;
                            let key = key_of(cost, floor);
                            if key <= key_cut {
                                fs.recombine_epsilon(key, cost, arc, s);
                            }
                        }
                        Ok(())
                    },
                )?;
                self.note_writes();
                frontier = self.fs.finish_round()?;
            }
        }
        self.stats.epsilon_rounds += rounds;

        let tokens = self.aggregate(cutoff)?;
        if tokens.is_empty() {
            return Err(Error::DecodeFailure(format!("no tokens survived at frame {frame}")));
        }
        self.stats.max_tokens = self.stats.max_tokens.max(tokens.len());
        if let Some(trace) = &mut self.trace {
            trace.push(tokens.iter().map(|t| (t.state, self.fs.pack(t.state))).collect());
        }

        self.record_epsilon_arcs(&tokens, cutoff)?;
        let pending = self.store.drain();
        let out = self.resolve(frame, &tokens, pending, cutoff)?;
        self.stats.lattice_arcs += out.emitting.len() + out.epsilon.len();
        if self.stats.lattice_arcs > self.cfg.max_lattice_arcs {
            return Err(Error::Capacity { limit: "max-lattice-arcs", value: self.cfg.max_lattice_arcs });
        }
        self.history.push(tokens);
        Ok(out)
    }

    /// One token per state with a surviving pack, in state order.
    fn aggregate(&self, cutoff: f64) -> Result<Vec<Token>> {
        let mut states = self.fs.touched();
        states.sort_unstable();
        states.dedup();
        let mut winners = Vec::with_capacity(states.len());
        for s in states {
            if let Some(w) = self.fs.winner(s)? {
                if w.cost <= cutoff {
                    winners.push((s, w));
                }
            }
        }
        if winners.len() > self.cfg.max_tokens_per_frame {
            return Err(Error::Capacity { limit: "max-tokens-per-frame", value: self.cfg.max_tokens_per_frame });
        }
        let index_of = |s: StateId| winners.binary_search_by_key(&s, |(st, _)| *st).ok();
        winners
            .iter()
            .map(|&(s, w)| {
                let arc_id = w.pack.arc_id();
                if arc_id == NO_ARC {
                    return Ok(Token { state: s, cost: w.cost, pred_arc: None, pred_token: None });
                }
                let arc = self.wfst.arc(arc_id);
                let pred = if arc.is_emitting() {
                    w.pred
                } else {
                    index_of(w.pred).ok_or_else(|| {
                        Error::Invariant(format!("epsilon predecessor {} of state {s} was dropped", w.pred))
                    })? as u32
                };
                Ok(Token { state: s, cost: w.cost, pred_arc: Some(arc_id), pred_token: Some(pred) })
            })
            .collect()
    }

    /// Epsilon passes between surviving tokens. Passes inside one epsilon
    /// cycle are kept only when they are the destination's winning arc, so
    /// the lattice stays acyclic.
    fn record_epsilon_arcs(&self, tokens: &[Token], cutoff: f64) -> Result<()> {
        if self.wfst.num_epsilon_arcs() == 0 {
            return Ok(());
        }
        let (wfst, store) = (self.wfst, &self.store);
        let index_of = |s: StateId| tokens.binary_search_by_key(&s, |t| t.state).ok();
        run_pass(
            self.shape,
            tokens.len(),
            |i| wfst.epsilon_arcs(tokens[i].state).len(),
            |w, i, range| {
                let tok = &tokens[i];
                for &id in &wfst.epsilon_arcs(tok.state)[range] {
                    let arc = wfst.arc(id);
                    let cost = tok.cost + arc.weight as f64;
                    if cost > cutoff {
                        continue;
                    }
                    let Some(j) = index_of(arc.dst) else { continue };
                    if wfst.same_epsilon_component(arc.src, arc.dst) && tokens[j].pred_arc != Some(id) {
                        continue;
                    }
                    store.push(
                        w,
                        PendingArc { from: i as u32, to_state: arc.dst, arc_id: id, cost, acoustic: 0.0, epsilon: true },
                    )?;
                }
                Ok(())
            },
        )
    }

    fn resolve(&self, frame: usize, tokens: &[Token], pending: Vec<PendingArc>, cutoff: f64) -> Result<FrameOutput> {
        let index_of = |s: StateId| tokens.binary_search_by_key(&s, |t| t.state).ok();
        let mut emitting = Vec::new();
        let mut epsilon = Vec::new();
        for p in pending {
            if p.cost > cutoff {
                continue;
            }
            let Some(to) = index_of(p.to_state) else { continue };
            let arc = self.wfst.arc(p.arc_id);
            let (from_frame, list) = if p.epsilon { (frame, &mut epsilon) } else { (frame - 1, &mut emitting) };
            list.push(LatticeArc {
                from: LatticeNodeId::new(from_frame, p.from as usize),
                to: LatticeNodeId::new(frame, to),
                ilabel: arc.ilabel,
                olabel: arc.olabel,
                graph_cost: arc.weight,
                acoustic_cost: p.acoustic,
                extra_cost: f64::INFINITY,
                pruned: false,
                arc_id: p.arc_id,
            });
        }
        Ok(FrameOutput {
            states: tokens.iter().map(|t| t.state).collect(),
            fwd: tokens.iter().map(|t| t.cost).collect(),
            emitting,
            epsilon,
        })
    }
}

fn append(lat: &mut Lattice, out: FrameOutput) {
    let f = lat.push_frame(out.states, out.fwd);
    if f > 0 {
        lat.set_emitting(f - 1, out.emitting);
    }
    lat.set_epsilon(f, out.epsilon);
}

fn check_inputs(wfst: &Wfst, m: &CostMatrix, cfg: &DecodeConfig) -> Result<()> {
    cfg.validate()?;
    if m.num_frames() == 0 {
        return Err(Error::Usage("cost matrix has no frames".into()));
    }
    if wfst.max_ilabel() as usize > m.num_labels() {
        return Err(Error::Usage(format!(
            "graph input label {} exceeds cost matrix width {}",
            wfst.max_ilabel(),
            m.num_labels()
        )));
    }
    Ok(())
}

fn run(wfst: &Wfst, m: &CostMatrix, cfg: &DecodeConfig) -> Result<DecodeResult> {
    check_inputs(wfst, m, cfg)?;
    let began = Instant::now();
    let mut search = Search::new(wfst, m, cfg);
    let mut lattice = Lattice::new();
    let mut pruning = Duration::ZERO;
    let mut prune_runs = 0;

    let first = search.start()?;
    append(&mut lattice, first);
    for t in 0..m.num_frames() {
        let prune_now = t > 0 && t % cfg.prune_interval == 0;
        let out = if prune_now {
            prune_runs += 1;
            let timed_prune = |lat: &mut Lattice| {
                let s = Instant::now();
                prune_lattice(lat, cfg.lattice_beam).map(|_| s.elapsed())
            };
            if cfg.overlap_prune {
                let (p, out) = rayon::join(|| timed_prune(&mut lattice), || search.advance(t));
                pruning += p?;
                out?
            } else {
                pruning += timed_prune(&mut lattice)?;
                search.advance(t)?
            }
        } else {
            search.advance(t)?
        };
        append(&mut lattice, out);
    }

    let last = search.history.last().expect("at least one frame");
    let mut finals: Vec<(f64, usize)> = last
        .iter()
        .enumerate()
        .filter_map(|(i, tok)| wfst.final_cost(tok.state).map(|c| (tok.cost + c as f64, i)))
        .collect();
    finals.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));
    let partial = finals.is_empty();
    let (cost, best, runner_up) = if partial {
        let (i, tok) = last
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost).then(a.0.cmp(&b.0)))
            .expect("frame has tokens");
        lattice.set_final_costs(vec![Some(0.0); last.len()]);
        (tok.cost, i, None)
    } else {
        lattice.set_final_costs(last.iter().map(|t| wfst.final_cost(t.state)).collect());
        (finals[0].0, finals[0].1, finals.get(1).map(|f| f.0))
    };

    let s = Instant::now();
    prune_lattice(&mut lattice, cfg.lattice_beam)?;
    pruning += s.elapsed();
    prune_runs += 1;

    let (words, alignment, best_path) = backtrace(wfst, &search.history, best)?;
    let mut stats = search.stats;
    stats.lattice_pruning = pruning;
    stats.prune_runs = prune_runs;
    stats.other = began.elapsed().saturating_sub(stats.token_passing + pruning);
    Ok(DecodeResult {
        words,
        alignment,
        cost,
        runner_up,
        partial,
        lattice,
        best_path,
        num_frames: m.num_frames(),
        trace: search.trace,
        stats,
    })
}

type Backtrace = (Vec<Label>, Vec<(Label, usize)>, Vec<(LatticeNodeId, ArcId)>);

/// Follows predecessor links from token `best` of the last frame back to the
/// start token.
pub(crate) fn backtrace(wfst: &Wfst, history: &[Vec<Token>], best: usize) -> Result<Backtrace> {
    let broken = |m: String| Error::Invariant(format!("broken backtrace: {m}"));
    let limit: usize = history.iter().map(Vec::len).sum();
    let (mut words, mut alignment, mut path) = (Vec::new(), Vec::new(), Vec::new());
    let mut f = history.len() - 1;
    let mut i = best;
    for _ in 0..=limit {
        let tok = history[f].get(i).ok_or_else(|| broken(format!("no token {i} in frame {f}")))?;
        let Some(arc_id) = tok.pred_arc else {
            if f != 0 {
                return Err(broken(format!("chain ends at frame {f}")));
            }
            words.reverse();
            alignment.reverse();
            path.reverse();
            return Ok((words, alignment, path));
        };
        let pred = tok.pred_token.ok_or_else(|| broken(format!("token {i} in frame {f} has no predecessor")))?;
        let arc = wfst.arc(arc_id);
        if arc.olabel != 0 {
            words.push(arc.olabel);
        }
        if arc.is_emitting() {
            f = f.checked_sub(1).ok_or_else(|| broken("emitting arc into frame 0".into()))?;
            alignment.push((arc.ilabel, f));
        }
        path.push((LatticeNodeId::new(f, pred as usize), arc_id));
        i = pred as usize;
    }
    Err(broken("predecessor cycle".into()))
}
