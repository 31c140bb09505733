//! Distribution of token-expansion work over the worker pool.
//!
//! Two strategies, selectable per decoder:
//!
//! * **static**: a prefix sum over the out-degrees of the active tokens, then
//!   every worker takes an equal slice of the global arc index space;
//! * **dynamic**: workers repeatedly claim the next unprocessed token from an
//!   atomic counter and walk its arcs in chunks of `group_size`.
//!
//! Both visit exactly the same `(token, arc)` pairs, so anything computed as
//! an order-independent reduction over them (the atomic min in recombination)
//! comes out identical.

use std::ops::Range;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SchedulerKind {
    Static,
    #[default]
    Dynamic,
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Self::Static),
            "dynamic" => Ok(Self::Dynamic),
            _ => Err(Error::Usage(format!("unknown scheduler `{s}` (static|dynamic)"))),
        }
    }
}

impl std::fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Static => "static",
            Self::Dynamic => "dynamic",
        })
    }
}

/// Hands out token indices `0..total`, each exactly once.
#[derive(Debug)]
pub struct Dispatcher {
    next: AtomicUsize,
    total: usize,
}

impl Dispatcher {
    pub fn new(total: usize) -> Self {
        Self {
            next: AtomicUsize::new(0),
            total,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Returns the next unclaimed index, or `None` once all are taken.
    #[inline]
    pub fn claim_next(&self) -> Option<usize> {
        let i = self.next.fetch_add(1, Ordering::Relaxed);
        (i < self.total).then_some(i)
    }
}

/// Equal-arc-count split of the active tokens' arcs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StaticPartition {
    /// `prefix[i]` = number of arcs owned by tokens `0..i`.
    pub prefix: Vec<usize>,
    /// Global arc-index interval of each worker.
    pub ranges: Vec<Range<usize>>,
}

/// Splits `sum(out_degrees)` arcs into `workers` contiguous intervals whose
/// sizes differ by at most one.
pub fn static_partition(out_degrees: &[usize], workers: usize) -> StaticPartition {
    let workers = workers.max(1);
    let mut prefix = Vec::with_capacity(out_degrees.len() + 1);
    let mut acc = 0usize;
    prefix.push(0);
    for &d in out_degrees {
        acc += d;
        prefix.push(acc);
    }
    let ranges = (0..workers)
        .map(|w| (w * acc / workers)..((w + 1) * acc / workers))
        .collect();
    StaticPartition { prefix, ranges }
}

impl StaticPartition {
    pub fn total_arcs(&self) -> usize {
        *self.prefix.last().unwrap_or(&0)
    }

    /// Maps a global arc index to `(token, offset within that token's arcs)`.
    pub fn locate(&self, global: usize) -> (usize, usize) {
        // greatest i with prefix[i] <= global, skipping zero-degree tokens
        let i = self.prefix.partition_point(|&p| p <= global) - 1;
        (i, global - self.prefix[i])
    }

    /// Per-token local arc ranges covering worker `w`'s interval.
    pub fn segments(&self, w: usize) -> impl Iterator<Item = (usize, Range<usize>)> + '_ {
        let range = self.ranges[w].clone();
        let first = if range.is_empty() { self.prefix.len() - 1 } else { self.locate(range.start).0 };
        (first..self.prefix.len() - 1)
            .take_while(move |&i| self.prefix[i] < range.end)
            .filter_map(move |i| {
                let lo = range.start.max(self.prefix[i]);
                let hi = range.end.min(self.prefix[i + 1]);
                (lo < hi).then(|| (i, lo - self.prefix[i]..hi - self.prefix[i]))
            })
    }
}

/// Parameters of one parallel pass.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PassShape {
    pub kind: SchedulerKind,
    pub workers: usize,
    pub group_size: usize,
}

/// Calls `work(worker, token, arc_range)` so that every arc of every token in
/// `0..num_tokens` is covered exactly once, spread over `workers` tasks on
/// the current rayon pool. Stops early and returns the first error.
pub(crate) fn run_pass<D, F>(shape: PassShape, num_tokens: usize, degree: D, work: F) -> Result<()>
where
    D: Fn(usize) -> usize + Sync,
    F: Fn(usize, usize, Range<usize>) -> Result<()> + Sync,
{
    if num_tokens == 0 {
        return Ok(());
    }
    let failed = AtomicBool::new(false);
    let first_err: Mutex<Option<Error>> = Mutex::new(None);
    let record = |e: Error| {
        failed.store(true, Ordering::Relaxed);
        let mut slot = first_err.lock().unwrap_or_else(|p| p.into_inner());
        slot.get_or_insert(e);
    };

    match shape.kind {
        SchedulerKind::Static => {
            let degrees: Vec<usize> = (0..num_tokens).map(&degree).collect();
            let part = static_partition(&degrees, shape.workers);
            let body = |w: usize| {
                for (tok, range) in part.segments(w) {
                    if failed.load(Ordering::Relaxed) {
                        return;
                    }
                    if let Err(e) = work(w, tok, range) {
                        record(e);
                        return;
                    }
                }
            };
            spawn_workers(shape.workers, &body);
        }
        SchedulerKind::Dynamic => {
            let dispatcher = Dispatcher::new(num_tokens);
            let group = shape.group_size.max(1);
            let body = |w: usize| {
                while let Some(tok) = dispatcher.claim_next() {
                    let deg = degree(tok);
                    let mut lo = 0;
                    while lo < deg {
                        if failed.load(Ordering::Relaxed) {
                            return;
                        }
                        let hi = (lo + group).min(deg);
                        if let Err(e) = work(w, tok, lo..hi) {
                            record(e);
                            return;
                        }
                        lo = hi;
                    }
                }
            };
            spawn_workers(shape.workers, &body);
        }
    }

    match first_err.into_inner().unwrap_or_else(|p| p.into_inner()) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn spawn_workers(workers: usize, body: &(dyn Fn(usize) + Sync)) {
    if workers <= 1 {
        body(0);
        return;
    }
    rayon::scope(|s| {
        for w in 1..workers {
            s.spawn(move |_| body(w));
        }
        body(0);
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::Arc;

    #[test]
    fn sequential_claims() {
        let d = Dispatcher::new(3);
        assert_eq!(
            (d.claim_next(), d.claim_next(), d.claim_next(), d.claim_next()),
            (Some(0), Some(1), Some(2), None)
        );
        assert_eq!(Dispatcher::new(0).claim_next(), None);
    }

    #[test]
    fn concurrent_claims_are_unique() {
        let d = Arc::new(Dispatcher::new(100));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let d = Arc::clone(&d);
                std::thread::spawn(move || {
                    let mut got = Vec::new();
                    while let Some(i) = d.claim_next() {
                        got.push(i);
                    }
                    got
                })
            })
            .collect();
        let mut all: Vec<usize> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn hand_computed_partition() {
        let p = static_partition(&[3, 1, 4, 2], 2);
        assert_eq!(p.prefix, vec![0, 3, 4, 8, 10]);
        assert_eq!(p.ranges, vec![0..5, 5..10]);
        assert_eq!(p.locate(5), (2, 1));
        assert_eq!(p.locate(0), (0, 0));
        assert_eq!(p.locate(3), (1, 0));
        assert_eq!(p.locate(9), (3, 1));
        let segs: Vec<_> = p.segments(0).collect();
        assert_eq!(segs, vec![(0, 0..3), (1, 0..1), (2, 0..1)]);
        let segs: Vec<_> = p.segments(1).collect();
        assert_eq!(segs, vec![(2, 1..4), (3, 0..2)]);
    }

    #[test]
    fn single_worker_and_empty() {
        let p = static_partition(&[2, 0, 5], 1);
        assert_eq!(p.ranges, vec![0..7]);
        assert_eq!(p.segments(0).collect::<Vec<_>>(), vec![(0, 0..2), (2, 0..5)]);
        let p = static_partition(&[], 4);
        assert!(p.ranges.iter().all(|r| r.is_empty()));
        assert_eq!(p.segments(3).count(), 0);
    }

    #[test]
    fn equal_degrees_split_evenly() {
        let p = static_partition(&[4; 8], 4);
        assert!(p.ranges.iter().all(|r| r.len() == 8));
    }

    #[test]
    fn locate_skips_empty_tokens() {
        let p = static_partition(&[0, 0, 3, 0, 1], 3);
        assert_eq!(p.locate(0), (2, 0));
        assert_eq!(p.locate(3), (4, 0));
    }

    proptest::proptest! {
        #[test]
        fn partition_tiles_exactly(degs in proptest::collection::vec(0usize..20, 0..40), workers in 1usize..12) {
            let p = static_partition(&degs, workers);
            let total: usize = degs.iter().sum();
            let mut next = 0;
            for r in &p.ranges {
                proptest::prop_assert_eq!(r.start, next);
                next = r.end;
            }
            proptest::prop_assert_eq!(next, total);
            let (lo, hi) = p.ranges.iter().fold((usize::MAX, 0), |(lo, hi), r| (lo.min(r.len()), hi.max(r.len())));
            proptest::prop_assert!(hi - lo <= 1);
            // segments cover every (token, arc) pair exactly once
            let mut seen = HashSet::new();
            for w in 0..workers {
                for (tok, r) in p.segments(w) {
                    for a in r {
                        proptest::prop_assert!(a < degs[tok]);
                        proptest::prop_assert!(seen.insert((tok, a)));
                    }
                }
            }
            proptest::prop_assert_eq!(seen.len(), total);
        }
    }

    #[test]
    fn run_pass_covers_all_arcs_under_both_schedulers() {
        let degs = [5usize, 0, 70, 1, 33, 2];
        for kind in [SchedulerKind::Static, SchedulerKind::Dynamic] {
            for workers in [1, 3, 8] {
                let seen = Mutex::new(Vec::new());
                let shape = PassShape { kind, workers, group_size: 4 };
                run_pass(shape, degs.len(), |i| degs[i], |w, tok, r| {
                    assert!(w < workers);
                    if kind == SchedulerKind::Dynamic {
                        assert!(r.len() <= 4);
                    }
                    seen.lock().unwrap().extend(r.map(|a| (tok, a)));
                    Ok(())
                })
                .unwrap();
                let mut seen = seen.into_inner().unwrap();
                seen.sort_unstable();
                let expect: Vec<_> = degs.iter().enumerate().flat_map(|(t, &d)| (0..d).map(move |a| (t, a))).collect();
                assert_eq!(seen, expect, "{kind} x{workers}");
            }
        }
    }

    #[test]
    fn run_pass_propagates_errors() {
        let shape = PassShape { kind: SchedulerKind::Dynamic, workers: 4, group_size: 1 };
        let r = run_pass(shape, 100, |_| 3, |_, tok, _| {
            if tok == 17 {
                Err(Error::Capacity { limit: "test", value: 17 })
            } else {
                Ok(())
            }
        });
        assert!(matches!(r, Err(Error::Capacity { value: 17, .. })));
    }
}
