//! Dense kernels, the LSTM cell, the recording tape and the finite-difference
//! oracle used to check it.

pub mod cell;
pub mod gradcheck;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use cell::{cell_forward, sequence_forward, CellParams};
pub use gradcheck::{extrapolated_gradient, finite_difference_gradient, relative_error, GradReport};
pub use kernels::{affine, sigmoid, temporal_softmax};
pub use tape::{CellVars, Gradients, Tape, Var};
pub use tensor::Tensor2;
