//! Dense kernels, parameters, the reverse-mode tape and gradient checking.
//!
//! Every kernel sums left to right in a fixed order, so results are
//! bit-reproducible for fixed inputs on one platform. Training runs in `f32`;
//! gradient checks run the same code in `f64`.

mod gradcheck;
mod graph;
pub mod kernels;
mod param;
mod real;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{AttentionSpec, Graph, PrefixInput, Var};
pub use kernels::{cross_entropy, layer_norm, linear, softmax};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use real::{r, Real};
pub use tensor::Tensor;
