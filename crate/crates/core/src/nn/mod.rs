//! Minimal reverse-mode tensor engine.
//!
//! Exactly the pieces the fusion network needs: valid (unpadded) 1D
//! convolution, width-2 max pooling, global average pooling, dense layers,
//! ReLU, a numerically stable sigmoid + binary cross-entropy, and Adam.
//! There is no general autodiff graph - the architecture is fixed, so each
//! layer exposes an explicit backward that is verified against central
//! finite differences.
//!
//! The engine is generic over [`Scalar`]: f64 for gradient verification,
//! f32 for training and inference (checkpoints store f32).

mod adam;
mod gradcheck;
mod layers;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{check_gradients, check_gradients_at, GradCheckReport, GRAD_CHECK_STEP};
pub use layers::{
    bce_grad_logit, bce_with_logits, global_avg_pool, global_avg_pool_backward, maxpool1d,
    maxpool1d_backward, relu, relu_backward, sigmoid, Conv1d, Dense,
};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input too short: length {got}, need at least {needed}")]
    InputTooShort { needed: usize, got: usize },
}

/// Element type the engine computes in.
pub trait Scalar:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    fn cast_from(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn cast_from(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn cast_from(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}
