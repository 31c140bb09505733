//! Per-frame acoustic cost matrices (negative log-likelihoods), the stand-in
//! for acoustic model output.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::wfst::Label;

/// `num_frames x num_labels` row-major matrix; column `d` holds the cost of
/// input label `d + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    num_frames: usize,
    num_labels: usize,
    costs: Vec<f32>,
}

impl CostMatrix {
    pub fn new(num_frames: usize, num_labels: usize, costs: Vec<f32>) -> Result<Self> {
        if num_frames == 0 || num_labels == 0 {
            return Err(Error::Validation(format!(
                "cost matrix must be at least 1x1, got {num_frames}x{num_labels}"
            )));
        }
        if costs.len() != num_frames * num_labels {
            return Err(Error::Validation(format!(
                "cost matrix has {} entries, expected {}",
                costs.len(),
                num_frames * num_labels
            )));
        }
        if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite cost at frame {}, label {}",
                i / num_labels,
                i % num_labels + 1
            )));
        }
        Ok(Self {
            num_frames,
            num_labels,
            costs,
        })
    }

    #[inline]
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    #[inline]
    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.costs[frame * self.num_labels..(frame + 1) * self.num_labels]
    }

    /// `scale * costs[frame][ilabel - 1]`, bounds-checked.
    pub fn acoustic_cost(&self, frame: usize, ilabel: Label, scale: f32) -> Result<f32> {
        if ilabel == 0 {
            return Err(Error::Usage("epsilon input label has no acoustic cost".into()));
        }
        if frame >= self.num_frames {
            return Err(Error::Usage(format!(
                "frame {frame} out of range ({} frames)",
                self.num_frames
            )));
        }
        if ilabel as usize > self.num_labels {
            return Err(Error::Usage(format!(
                "input label {ilabel} exceeds matrix width {}",
                self.num_labels
            )));
        }
        Ok(self.scaled(frame, ilabel, scale))
    }

    /// Unchecked variant of [`CostMatrix::acoustic_cost`]; the caller has
    /// validated the graph labels against the matrix width.
    #[inline]
    pub fn scaled(&self, frame: usize, ilabel: Label, scale: f32) -> f32 {
        scale * self.costs[frame * self.num_labels + ilabel as usize - 1]
    }

    /// Smallest scaled cost of a frame, clamped to at most zero. Subtracting
    /// this per frame keeps accumulated costs non-negative without changing
    /// the ranking of paths (every path crosses each frame exactly once).
    pub fn frame_floor(&self, frame: usize, scale: f32) -> f32 {
        self.row(frame)
            .iter()
            .map(|&c| scale * c)
            .fold(0.0f32, f32::min)
    }
}

/// Parses `T D` followed by `T` rows of `D` reals.
pub fn load_cost_matrix(text: &str) -> Result<CostMatrix> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let Some((hline, header)) = lines.next() else {
        return Err(Error::parse(1, "missing `T D` header"));
    };
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(Error::parse(hline, "header must be `T D`"));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(hline, format!("bad dimension `{s}`")))
    };
    let (frames, labels) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
    if frames == 0 || labels == 0 {
        return Err(Error::parse(hline, "dimensions must be positive"));
    }

    let mut costs = Vec::with_capacity(frames * labels);
    let mut rows = 0usize;
    for (lineno, line) in lines {
        rows += 1;
        if rows > frames {
            return Err(Error::parse(lineno, format!("more than {frames} rows")));
        }
        let before = costs.len();
        for tok in line.split_whitespace() {
            let v = tok
                .parse::<f32>()
                .map_err(|_| Error::parse(lineno, format!("`{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(lineno, format!("non-finite value `{tok}`")));
            }
            costs.push(v);
        }
        let width = costs.len() - before;
        if width != labels {
            return Err(Error::parse(
                lineno,
                format!("row {rows} has {width} of {labels} entries"),
            ));
        }
    }
    if rows != frames {
        return Err(Error::parse(
            text.lines().count().max(1),
            format!("expected {frames} rows, found {rows}"),
        ));
    }
    CostMatrix::new(frames, labels, costs)
}

pub fn write_cost_matrix(m: &CostMatrix) -> String {
    let mut out = format!("{} {}\n", m.num_frames, m.num_labels);
    for t in 0..m.num_frames {
        let row: Vec<String> = m.row(t).iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}
