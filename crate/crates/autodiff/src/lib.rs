//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine,
//! sized for training small transformers on a CPU.

mod error;
mod graph;
mod kernels;
pub mod optim;
pub mod rng;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{gelu, log_softmax_row, Gradients, Graph, Var};
pub use optim::Adam;
pub use tensor::Tensor;
