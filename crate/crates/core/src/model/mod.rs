//! Encoder-decoder transformer with answer conditioning.

pub mod attention;
mod config;
pub mod cp;
pub mod decoder;
pub mod encoder;
pub mod gradcheck;
pub mod loss;
pub mod weights;

use rand_chacha::ChaCha8Rng;

pub use attention::{attention, causal_mask, multi_head_attention, padding_mask, MASK_OFF};
pub use config::{experiment_matrix, ConditioningConfig, ModelConfig, DEFAULT_CP_K};
pub use cp::cp_transform;
pub use decoder::{aa_block, decode, decoder_layer};
pub use encoder::{answer_embedding, encode, encoder_layer, masked_mean, EncoderOutput};
pub use gradcheck::{model_suite, MODEL_TOLERANCE};
pub use loss::{cross_entropy, forward_loss, prepare_source, PreparedSource};
pub use weights::{
    AaBlockWeights, AttentionWeights, DecoderLayerWeights, EncoderLayerWeights,
    FeedForwardWeights, LayerNormWeights, ModelWeights,
};

use crate::scalar::Scalar;
use crate::tensor::{dropout, Tensor};

/// Applies dropout only when a rate and an RNG are both present; evaluation
/// passes `None` and gets the identity.
pub(crate) fn maybe_dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Tensor<T> {
    match rng {
        Some(r) if rate > 0.0 => dropout(x, rate, r),
        _ => x.clone(),
    }
}
