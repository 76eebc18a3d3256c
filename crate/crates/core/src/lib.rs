//! Rehearsal-free incremental learning over frozen feature vectors.
//!
//! Every stage of a data stream gets its own isolated classifier head. Heads are
//! trained with softmax cross-entropy plus an anchor term that pins their
//! Helmholtz free energy to a shared level, so that confidence scores of heads
//! that never saw each other's data stay comparable. After each stage a
//! temperature is picked from a candidate grid by maximizing stage
//! identification accuracy on the current data, and the picked temperatures
//! vote at inference time on which head should answer.
//!
//! Module map:
//!
//! - [`energy`]: logsumexp, free energy, confidence scores, Gibbs probabilities
//! - [`head`]: per-stage classifier, losses and analytic gradients
//! - [`trainer`]: SGD per stage, temperature calibration, stream driver
//! - [`inference`]: stage votes, mode selection, final prediction
//! - [`metrics`]: accuracy matrix, final average accuracy and forgetting
//! - [`data`]: records, synthetic streams, the `ESNF` embedding format, manifests
//! - [`harness`]: configuration, bank persistence, experiments and reports
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod data;
pub mod energy;
pub mod error;
pub mod harness;
pub mod head;
pub mod inference;
pub mod metrics;
pub mod trainer;

#[cfg(test)]
mod oracle;

pub use error::{Error, Result};

/// One-based stage identifier.
pub type StageId = u16;

/// Global class identifier.
pub type ClassId = u32;
