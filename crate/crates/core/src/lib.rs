//! Answer-aware question generation, from the numeric substrate up.
//!
//! The crate builds an encoder-decoder transformer from scratch — dense
//! tensors with reverse-mode autodiff, training with Adam and a linear LR
//! schedule, beam-search decoding, and ROUGE-L/METEOR-style evaluation —
//! around four ways of conditioning generation on a chosen answer span:
//!
//! * **AP** (answer prompting): the answer is prepended to the passage on the
//!   encoder side.
//! * **RS** (related sentences): the passage is reduced to the sentences that
//!   contain the answer.
//! * **CP** (custom product): encoder outputs are reweighted by a softmax of
//!   their similarity to the pooled answer embedding, scaled by a constant k.
//! * **AA** (answer attention): an extra decoder attention block reads the
//!   pooled answer embedding.
//!
//! Everything is generic over the scalar type: `f32` for training, `f64` for
//! gradient checking. The [`Tensor32`]/[`Tensor64`] aliases pin the two.

pub mod commands;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod model;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod threads;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Gradient-check-precision tensor.
pub type Tensor64 = Tensor<f64>;
