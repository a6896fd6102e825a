//! Human mesh recovery with a deformable cross-attention decoder.
//!
//! * [`numeric`]: `f64` tensors, kernels and reverse-mode differentiation
//! * [`decoder`]: multi-query decoder with context-conditioned sampling
//! * [`body`]: 6D rotations, a synthetic SMPL-form body and weak-perspective projection
//! * [`training`]: regression heads, losses, AdamW, synthetic data and the training loop
//! * [`eval`]: MPJPE, PA-MPJPE and PVE

pub mod body;
pub mod config;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod numeric;
pub mod training;

pub use error::{Error, Result};
