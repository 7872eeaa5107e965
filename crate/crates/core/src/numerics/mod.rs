//! Dense `f64` tensors, a reverse-mode tape, initializers, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
pub mod init;
mod params;
mod rng;
mod tensor;

pub use adam::{adam_update, Adam, AdamConfig, AdamState};
pub use gradcheck::{check_gradient, check_gradient_with, GradCheckReport};
pub use graph::{softmax_in_place, Gradients, Graph, Var, LOG_CLAMP};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::{ensure_finite, Tensor};
