//! Word error rate, lattice oracle error rate and lattice density.

use crate::error::{Error, Result};
use crate::lattice::FinalLattice;
use crate::wfst::Label;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WerStats {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
    pub wer_percent: f64,
}

impl WerStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Step {
    Match,
    Sub,
    Ins,
    Del,
}

/// Levenshtein alignment of `hyp` against `reference` with unit costs. On
/// equal cost the backtrace prefers substitution, then insertion, then
/// deletion.
pub fn wer(hyp: &[Label], reference: &[Label]) -> Result<WerStats> {
    if reference.is_empty() {
        return Err(Error::Usage("reference is empty".into()));
    }
    let (n, m) = (hyp.len(), reference.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }

    let mut stats = WerStats { ref_len: m, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let step = if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]) {
            if hyp[i - 1] == reference[j - 1] {
                Step::Match
            } else {
                Step::Sub
            }
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            Step::Ins
        } else {
            Step::Del
        };
        match step {
            Step::Match => {}
            Step::Sub => stats.substitutions += 1,
            Step::Ins => stats.insertions += 1,
            Step::Del => stats.deletions += 1,
        }
        match step {
            Step::Match | Step::Sub => (i, j) = (i - 1, j - 1),
            Step::Ins => i -= 1,
            Step::Del => j -= 1,
        }
    }
    stats.wer_percent = 100.0 * stats.errors() as f64 / m as f64;
    Ok(stats)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleWer {
    pub errors: usize,
    pub ref_len: usize,
    pub ower_percent: f64,
}

/// Smallest edit distance between `reference` and the word sequence of any
/// complete lattice path, by dynamic programming over `(node, reference
/// position)` in topological order.
pub fn oracle_wer(lat: &FinalLattice, reference: &[Label]) -> Result<OracleWer> {
    if reference.is_empty() {
        return Err(Error::Usage("reference is empty".into()));
    }
    let m = reference.len();
    let n = lat.num_nodes as usize;
    let order = lat.topological_order()?;
    let mut incoming = vec![Vec::new(); n];
    for a in &lat.arcs {
        incoming[a.to as usize].push(a);
    }

    const UNREACHED: usize = usize::MAX / 2;
    let mut cost = vec![vec![UNREACHED; m + 1]; n];
    for v in order {
        let v = v as usize;
        let mut row = vec![UNREACHED; m + 1];
        if v == lat.start as usize {
            row[0] = 0;
        }
        for a in &incoming[v] {
            let prev = &cost[a.from as usize];
            for j in 0..=m {
                let mut best = if a.olabel == 0 { prev[j] } else { prev[j] + 1 };
                if a.olabel != 0 && j > 0 {
                    best = best.min(prev[j - 1] + usize::from(a.olabel != reference[j - 1]));
                }
                row[j] = row[j].min(best);
            }
        }
        for j in 1..=m {
            row[j] = row[j].min(row[j - 1] + 1);
        }
        cost[v] = row;
    }

    let errors = lat
        .finals
        .iter()
        .map(|&(f, _)| cost[f as usize][m])
        .min()
        .filter(|&e| e < UNREACHED)
        .ok_or_else(|| Error::DecodeFailure("lattice has no complete path".into()))?;
    Ok(OracleWer {
        errors,
        ref_len: m,
        ower_percent: 100.0 * errors as f64 / m as f64,
    })
}

/// Surviving arcs per frame.
pub fn lattice_density(lat: &FinalLattice, num_frames: usize) -> f64 {
    if num_frames == 0 {
        return 0.0;
    }
    lat.arcs.len() as f64 / num_frames as f64
}
