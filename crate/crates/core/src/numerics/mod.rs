//! Minimal tensor math with reverse-mode autodiff, sized for a toy
//! transformer on one CPU core.

mod suite;
mod tape;
mod tensor;

pub use suite::{primitive_suite, CheckResult, SuiteReport};
pub use tape::{NumericsError, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
