//! Dynamic hypergraph learning for hyperedge prediction.
//!
//! The crate is organised bottom-up:
//!
//! * [`hypercore`]: snapshot data model, simplex-format ingestion, partitioning.
//! * [`diffcore`]: tensors, reverse-mode tape, parameter store, Adam.
//! * [`intra`]: encoding within one snapshot (time injection, node/edge
//!   aggregation, proximity graphs).
//! * [`inter`]: recurrent per-layer node state carried across snapshots.
//! * [`negsample`]: motif negative sampling and candidate batches.
//! * [`trainer`]: predictor, losses, metrics and the live-update protocol.
//! * [`analysis`]: overlap/time-gap and re-appearance statistics.
//! * [`synth`]: planted synthetic datasets used by tests and demos.

pub mod analysis;
pub mod diffcore;
pub mod hypercore;
pub mod inter;
pub mod intra;
pub mod negsample;
pub mod synth;
pub mod trainer;
