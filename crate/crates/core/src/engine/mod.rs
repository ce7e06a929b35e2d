//! Minimal dense-tensor engine with hand-written reverse-mode kernels for the
//! handful of layers the autoencoder needs.
//!
//! Every kernel is generic over [`Real`] so the same code runs in 32-bit for
//! training and in 64-bit for finite-difference verification.

mod activation;
mod adam;
mod conv;
mod dense;
mod loss;
mod real;
mod rng;
mod tensor;

pub use activation::{dropout, dropout_backward, relu, relu_backward, DropoutMask, Mode};
pub use adam::{adam_step, AdamConfig, AdamState, LayerGrads, LayerParams};
pub use conv::{conv1d_backward, conv1d_forward, conv1d_transpose_backward, conv1d_transpose_forward};
pub use dense::{dense_backward, dense_forward};
pub use loss::{mse_grad, mse_loss};
pub use real::Real;
pub use rng::RngState;
pub use tensor::Tensor;
