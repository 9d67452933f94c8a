//! Completion moment detection from per-frame features.
//!
//! Two recurrent networks read the same feature sequence: one produces a
//! temporal attention distribution, the other per-frame completion evidence.
//! With only sequence-level labels the two are trained jointly to say whether
//! an attempt completed somewhere; the moment is then recovered by the split
//! that best separates incompletion evidence from completion evidence. With
//! annotated moments the completion branch regresses the relative distance
//! to the moment, and the attention-weighted per-frame estimates are averaged.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: tensors, kernels, the LSTM cell, a recording tape for
//!   reverse-mode gradients, and the finite-difference oracle.
//! - [`features`]: frame classifier, feature/manifest files, synthetic data,
//!   resampling.
//! - [`model`]: the two networks, losses and training schedules.
//! - [`inference`]: attention post-processing and the two detectors.
//! - [`evaluation`]: frame accuracy, relative distance, comparison reports.
//! - [`pipeline`]: file-level orchestration shared by the CLI and the tests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod sequence;
pub mod verify;

pub use error::{Error, Result};
pub use inference::{Moment, Prediction};
pub use sequence::{FeatureSequence, Label, LabeledSequence, RawSequence};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
}
