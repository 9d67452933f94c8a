//! Per-frame features: the frame classifier, file formats, synthetic data and
//! temporal resampling.

pub mod classifier;
pub mod io;
pub mod resample;
pub mod synth;

pub use classifier::{train_frame_classifier, ClassifierConfig, ClassifierRun, FrameClassifier};
pub use io::{read_frames, write_frames, FrameKind, Manifest, ManifestRecord};
pub use resample::{resample_labeled, resample_sequence, source_indices};
pub use synth::{generate_synthetic_dataset, SynthDataset, SynthSpec};
