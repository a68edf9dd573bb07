//! Reverse-mode autodiff: tensors, the tape, raw kernels, and a
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use gradcheck::{gradcheck, GradReport};
pub use tape::Tape;
pub use tensor::Tensor;
