use crate::error::{Error, Result};
use crate::scheduler::SchedulerKind;

/// Search and lattice parameters for one decoder instance.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    /// Tokens costlier than the frame best plus `beam` are dropped.
    pub beam: f64,
    /// Lattice arcs whose extra cost exceeds this are pruned.
    pub lattice_beam: f64,
    pub acoustic_scale: f32,
    pub num_workers: usize,
    /// Arcs of one token handed to a dynamic-scheduler worker per chunk.
    pub group_size: usize,
    /// Number of lattice arc shards (`K`).
    pub num_shards: usize,
    /// Prune the lattice-so-far every this many frames.
    pub prune_interval: usize,
    pub max_tokens_per_frame: usize,
    pub max_lattice_arcs: usize,
    pub scheduler: SchedulerKind,
    /// Run mid-utterance pruning concurrently with the next frame.
    pub overlap_prune: bool,
    /// Record the per-frame winning packed tokens in the result.
    pub trace_packs: bool,
    /// Count per-arc buffer writes per pass.
    pub instrument: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 14.0,
            lattice_beam: 8.0,
            acoustic_scale: 1.0,
            num_workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            group_size: 32,
            num_shards: 32,
            prune_interval: 25,
            max_tokens_per_frame: 1 << 20,
            max_lattice_arcs: 1 << 26,
            scheduler: SchedulerKind::Dynamic,
            overlap_prune: true,
            trace_packs: false,
            instrument: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if !(self.beam > 0.0) || !self.beam.is_finite() {
            return bad(format!("beam must be positive and finite, got {}", self.beam));
        }
        if !(self.lattice_beam >= 0.0) {
            return bad(format!("lattice beam must be >= 0, got {}", self.lattice_beam));
        }
        if !(self.acoustic_scale > 0.0) || !self.acoustic_scale.is_finite() {
            return bad(format!("acoustic scale must be positive, got {}", self.acoustic_scale));
        }
        if self.num_workers == 0 || self.group_size == 0 || self.num_shards == 0 {
            return bad("workers, group size and shard count must be >= 1".into());
        }
        if self.prune_interval == 0 {
            return bad("prune interval must be >= 1".into());
        }
        if self.max_tokens_per_frame == 0 || self.max_lattice_arcs == 0 {
            return bad("capacity limits must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = DecodeConfig::default();
        c.validate().unwrap();
        assert_eq!(c.beam, 14.0);
        assert_eq!((c.group_size, c.num_shards), (32, 32));
    }

    #[test]
    fn rejects_bad_values() {
        for f in [
            |c: &mut DecodeConfig| c.beam = 0.0,
            |c: &mut DecodeConfig| c.beam = f64::NAN,
            |c: &mut DecodeConfig| c.lattice_beam = -1.0,
            |c: &mut DecodeConfig| c.acoustic_scale = 0.0,
            |c: &mut DecodeConfig| c.num_workers = 0,
            |c: &mut DecodeConfig| c.num_shards = 0,
            |c: &mut DecodeConfig| c.prune_interval = 0,
        ] {
            let mut c = DecodeConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::Usage(_))), "{c:?}");
        }
        let c = DecodeConfig { lattice_beam: f64::INFINITY, ..Default::default() };
        c.validate().unwrap();
    }
}
