//! The attention and completion-score networks, their losses and training.

pub mod checkpoint;
pub mod forward;
pub mod loss;
pub mod params;
pub mod train;

pub use forward::{forward, FrameTrace};
pub use loss::{supervised_loss, weak_loss, weak_loss_term, weak_sequence_prediction};
pub use params::{AttentionKind, Branch, LossVariant, ModelMeta, ModelParams, Mode, TENSOR_NAMES};
pub use train::{sequence_gradients, sequence_loss, train, Objective, TrainConfig, TrainRun};
