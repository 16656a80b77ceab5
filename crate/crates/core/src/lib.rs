//! Minimal reverse-mode differentiable tensor engine.
//!
//! Dense f64 tensors, a Wengert tape with closure-recorded backward rules,
//! the operation set needed by a hierarchical attention classifier, a
//! finite-difference gradient oracle, and the on-disk tensor format.
//!
//! Forward and backward are deterministic: identical inputs and parameters
//! produce bit-identical results regardless of the configured thread count.

pub mod checks;
pub mod error;
pub mod fdcheck;
pub mod io;
pub mod ops;
pub mod par;
mod tape;
mod tensor;

pub use error::TensorError;
pub use tape::{GradSink, Tape};
pub use tensor::{Tensor, TensorData};
