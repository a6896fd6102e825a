//! Minimal differentiable tensor engine: `f64` tensors, the kernels the
//! decoder needs, a reverse-mode tape, and finite-difference checking.

pub mod conv;
pub mod gradcheck;
pub mod linalg;
pub mod norm;
pub mod params;
pub mod rng;
pub mod sample;
pub mod tape;
pub mod tensor;

pub use conv::Conv2dSpec;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use params::{Bound, ParamId, ParamStore};
pub use rng::RngSeed;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
