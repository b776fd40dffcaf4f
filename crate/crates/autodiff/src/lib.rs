//! A small define-by-run reverse-mode autodiff engine over `f64` tensors with
//! the layer set of a convolutional hourglass encoder, Adam and a named
//! checkpoint container.

mod error;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use error::{Error, Result};
pub use graph::{BatchStats, Grads, Graph, Var, BN_EPS};
pub use params::{Adam, ParamStore};
pub use tensor::Tensor;
