//! Parallel token-passing Viterbi beam search over weighted finite-state
//! transducers, with exact lattice generation and lattice pruning.
//!
//! The engine runs every frame as a handful of data-parallel passes over a
//! worker pool:
//!
//! * token recombination is a 64-bit atomic min over packed
//!   `(cost, arc id)` words ([`decoder::PackedToken`]);
//! * work is spread over workers either by a static prefix-sum partition of
//!   arcs or by a dynamic atomic dispatcher ([`scheduler`]);
//! * lattice arcs are appended into `K` sharded, pre-allocated vectors
//!   ([`lattice::ShardedArcStore`]) and pruned by iterative extra-cost
//!   propagation ([`lattice::prune_lattice`]), overlapped with decoding.
//!
//! [`reference`] holds single-threaded oracles used to check all of the
//! above.

pub mod acoustics;
pub mod config;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod lattice;
pub mod reference;
pub mod scheduler;
pub mod synth;
pub mod wfst;

pub use acoustics::CostMatrix;
pub use config::DecodeConfig;
pub use decoder::{decode_utterance, DecodeResult, Engine};
pub use error::{Error, Result};
pub use lattice::{FinalLattice, Lattice};
pub use scheduler::SchedulerKind;
pub use wfst::{Arc, Wfst};
