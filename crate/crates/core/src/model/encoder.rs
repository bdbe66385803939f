//! Passage/answer encoder: embeddings, pre-norm self-attention stack, and the
//! pooled answer embedding.

use rand_chacha::ChaCha8Rng;

use super::attention::{multi_head_attention, padding_mask};
use super::config::ModelConfig;
use super::maybe_dropout;
use super::weights::{EncoderLayerWeights, FeedForwardWeights, ModelWeights};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{embedding, Tensor};

/// Encoded source sequence plus the validity flags needed to mask attention
/// over it later.
#[derive(Debug, Clone)]
pub struct EncoderOutput<T: Scalar> {
    /// `[batch, len, d]` final hidden states.
    pub states: Tensor<T>,
    /// Row-major `[batch, len]` flags; 1 = real token, 0 = padding.
    pub flags: Vec<u8>,
    pub batch: usize,
    pub len: usize,
}

/// Token + learned position embeddings for a `[b, n]` id plane.
pub(crate) fn embed<T: Scalar>(
    ids: &[u32],
    b: usize,
    n: usize,
    weights: &ModelWeights<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    assert_eq!(ids.len(), b * n, "id plane does not match batch dimensions");
    if n > cfg.max_positions {
        return Err(Error::Contract(format!(
            "sequence length {n} exceeds the configured maximum of {} positions",
            cfg.max_positions
        )));
    }
    let tok = embedding(&weights.token_embedding, ids, &[b, n])?;
    let pos_ids: Vec<u32> = (0..n as u32).collect();
    let pos = embedding(&weights.position_embedding, &pos_ids, &[n])?;
    tok.add(&pos)
}

pub(crate) fn feed_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &FeedForwardWeights<T>,
) -> Result<Tensor<T>> {
    x.matmul(&w.w1)?
        .add(&w.b1)?
        .relu()
        .matmul(&w.w2)?
        .add(&w.b2)
}

/// One pre-norm encoder layer:
/// `h = x + SelfAttn(LN(x)); out = h + FFN(LN(h))`.
pub fn encoder_layer<T: Scalar>(
    x: &Tensor<T>,
    lw: &EncoderLayerWeights<T>,
    heads: usize,
    mask: Option<&Tensor<T>>,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<T>> {
    let normed = x.layer_norm(&lw.ln1.gain, &lw.ln1.bias, 1e-5)?;
    let (attn, _) = multi_head_attention(&normed, &normed, &lw.self_attn, heads, mask)?;
    let h = x.add(&maybe_dropout(&attn, dropout, rng.as_deref_mut()))?;

    let normed = h.layer_norm(&lw.ln2.gain, &lw.ln2.bias, 1e-5)?;
    let ff = feed_forward(&normed, &lw.ff)?;
    h.add(&maybe_dropout(&ff, dropout, rng.as_deref_mut()))
}

/// Encodes a padded `[b, n]` id plane into `[b, n, d]` hidden states.
pub fn encode<T: Scalar>(
    ids: &[u32],
    flags: &[u8],
    b: usize,
    n: usize,
    weights: &ModelWeights<T>,
    cfg: &ModelConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<EncoderOutput<T>> {
    assert_eq!(flags.len(), b * n, "flag plane does not match batch dimensions");
    let mut x = maybe_dropout(
        &embed(ids, b, n, weights, cfg)?,
        cfg.dropout,
        rng.as_deref_mut(),
    );
    let mask = padding_mask::<T>(flags, b, n);
    for layer in &weights.encoder {
        x = encoder_layer(&x, layer, cfg.heads, Some(&mask), cfg.dropout, rng.as_deref_mut())?;
    }
    let states = x.layer_norm(&weights.encoder_norm.gain, &weights.encoder_norm.bias, 1e-5)?;
    Ok(EncoderOutput {
        states,
        flags: flags.to_vec(),
        batch: b,
        len: n,
    })
}

/// Pooled answer embedding `[b, d]`: the answer ids are encoded with the
/// shared encoder and mean-pooled over non-padding positions.
///
/// Every batch row must contain at least one real answer token.
pub fn answer_embedding<T: Scalar>(
    ids: &[u32],
    flags: &[u8],
    b: usize,
    n: usize,
    weights: &ModelWeights<T>,
    cfg: &ModelConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<T>> {
    let enc = encode(ids, flags, b, n, weights, cfg, rng)?;
    masked_mean(&enc.states, flags, b, n)
}

/// Mean over rows where `flags` is non-zero; `states` is `[b, n, d]`.
pub fn masked_mean<T: Scalar>(
    states: &Tensor<T>,
    flags: &[u8],
    b: usize,
    n: usize,
) -> Result<Tensor<T>> {
    let mut inv_counts = vec![T::zero(); b];
    for (row, slot) in inv_counts.iter_mut().enumerate() {
        let count = flags[row * n..(row + 1) * n]
            .iter()
            .filter(|&&f| f != 0)
            .count();
        if count == 0 {
            return Err(Error::Contract(format!(
                "answer embedding requires at least one answer token (batch row {row} is empty)"
            )));
        }
        *slot = T::from_f64(1.0 / count as f64);
    }
    let keep = Tensor::new(
        &[b, n, 1],
        flags
            .iter()
            .map(|&f| if f != 0 { T::one() } else { T::zero() })
            .collect(),
    );
    let scale = Tensor::new(&[b, 1], inv_counts);
    states.mul(&keep)?.sum_axis(1)?.mul(&scale)
}
