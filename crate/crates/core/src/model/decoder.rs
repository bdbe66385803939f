//! Question decoder: causal self-attention, cross-attention over the encoded
//! passage, the optional answer-attention block, and the tied output
//! projection.

use rand_chacha::ChaCha8Rng;

use super::attention::{causal_mask, multi_head_attention, padding_mask};
use super::config::ModelConfig;
use super::encoder::{embed, feed_forward, EncoderOutput};
use super::maybe_dropout;
use super::weights::{AaBlockWeights, DecoderLayerWeights, ModelWeights};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Answer-attention block. The decoder states attend to the pooled answer
/// embedding (a single key/value position), and the result is added back and
/// normalized: `out = LN(h + Attn(h, e_a))`.
pub fn aa_block<T: Scalar>(
    h: &Tensor<T>,
    e_a: &Tensor<T>,
    w: &AaBlockWeights<T>,
    heads: usize,
    dropout: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<T>> {
    let (b, d) = match e_a.shape() {
        [b, d] => (*b, *d),
        _ => {
            return Err(Error::Contract(format!(
                "answer embedding must be [batch, d], got {:?}",
                e_a.shape()
            )))
        }
    };
    let kv = e_a.reshape(&[b, 1, d])?;
    let (ctx, _) = multi_head_attention(h, &kv, &w.attn, heads, None)?;
    h.add(&maybe_dropout(&ctx, dropout, rng))?
        .layer_norm(&w.norm.gain, &w.norm.bias, 1e-5)
}

/// One pre-norm decoder layer; the answer-attention block (when present)
/// sits between cross-attention and the feed-forward sublayer.
#[allow(clippy::too_many_arguments)]
pub fn decoder_layer<T: Scalar>(
    x: &Tensor<T>,
    lw: &DecoderLayerWeights<T>,
    enc_states: &Tensor<T>,
    self_mask: &Tensor<T>,
    cross_mask: &Tensor<T>,
    e_a: Option<&Tensor<T>>,
    heads: usize,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<T>> {
    let normed = x.layer_norm(&lw.ln1.gain, &lw.ln1.bias, 1e-5)?;
    let (attn, _) = multi_head_attention(&normed, &normed, &lw.self_attn, heads, Some(self_mask))?;
    let mut h = x.add(&maybe_dropout(&attn, dropout, rng.as_deref_mut()))?;

    let normed = h.layer_norm(&lw.ln2.gain, &lw.ln2.bias, 1e-5)?;
    let (cross, _) =
        multi_head_attention(&normed, enc_states, &lw.cross_attn, heads, Some(cross_mask))?;
    h = h.add(&maybe_dropout(&cross, dropout, rng.as_deref_mut()))?;

    if let Some(aw) = &lw.aa {
        let e_a = e_a.ok_or_else(|| {
            Error::Config("answer attention is enabled but no answer embedding was provided".into())
        })?;
        h = aa_block(&h, e_a, aw, heads, dropout, rng.as_deref_mut())?;
    }

    let normed = h.layer_norm(&lw.ln3.gain, &lw.ln3.bias, 1e-5)?;
    let ff = feed_forward(&normed, &lw.ff)?;
    h.add(&maybe_dropout(&ff, dropout, rng.as_deref_mut()))
}

/// Runs the decoder over a `[b, m]` plane of target-side ids and returns
/// vocabulary logits `[b, m, vocab]` through the tied output projection.
pub fn decode<T: Scalar>(
    ids: &[u32],
    b: usize,
    m: usize,
    enc: &EncoderOutput<T>,
    e_a: Option<&Tensor<T>>,
    weights: &ModelWeights<T>,
    cfg: &ModelConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<T>> {
    if cfg.conditioning.aa && e_a.is_none() {
        return Err(Error::Config(
            "answer attention is enabled but no answer embedding was provided".into(),
        ));
    }
    let mut x = maybe_dropout(
        &embed(ids, b, m, weights, cfg)?,
        cfg.dropout,
        rng.as_deref_mut(),
    );
    let self_mask = causal_mask::<T>(m);
    let cross_mask = padding_mask::<T>(&enc.flags, enc.batch, enc.len);
    for layer in &weights.decoder {
        x = decoder_layer(
            &x,
            layer,
            &enc.states,
            &self_mask,
            &cross_mask,
            e_a,
            cfg.heads,
            cfg.dropout,
            rng.as_deref_mut(),
        )?;
    }
    let x = x.layer_norm(&weights.decoder_norm.gain, &weights.decoder_norm.bias, 1e-5)?;
    // Tied projection: logits = states · token_embedding^T.
    x.matmul(&weights.token_embedding.transpose_last()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encoder::encode;
    use crate::model::{ConditioningConfig, DEFAULT_CP_K};
    use rand::{Rng, SeedableRng};

    fn setup(aa: bool) -> (ModelConfig, ModelWeights<f32>) {
        let mut cfg = ModelConfig::toy(30);
        cfg.conditioning = ConditioningConfig {
            aa,
            ..ConditioningConfig::none()
        };
        let w = ModelWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(77));
        (cfg, w)
    }

    fn encode_src(cfg: &ModelConfig, w: &ModelWeights<f32>) -> EncoderOutput<f32> {
        let ids = [5u32, 6, 7, 8, 0];
        let flags = [1u8, 1, 1, 1, 0];
        encode(&ids, &flags, 1, 5, w, cfg, None).unwrap()
    }

    #[test]
    fn logits_cover_vocabulary() {
        let (cfg, w) = setup(false);
        let enc = encode_src(&cfg, &w);
        let logits = decode(&[1u32, 9, 10], 1, 3, &enc, None, &w, &cfg, None).unwrap();
        assert_eq!(logits.shape(), &[1, 3, cfg.vocab]);
        assert!(logits.is_finite());
    }

    #[test]
    fn future_positions_cannot_affect_earlier_logits() {
        let (cfg, w) = setup(false);
        let enc = encode_src(&cfg, &w);
        let a = decode(&[1u32, 9, 10, 11], 1, 4, &enc, None, &w, &cfg, None).unwrap();
        let b = decode(&[1u32, 9, 22, 23], 1, 4, &enc, None, &w, &cfg, None).unwrap();
        for i in 0..2 * cfg.vocab {
            let diff = (a.data()[i] - b.data()[i]).abs();
            assert!(diff < 1e-5, "leak at flat index {i}: {diff}");
        }
    }

    #[test]
    fn answer_attention_requires_embedding() {
        let (cfg, w) = setup(true);
        let enc = encode_src(&cfg, &w);
        let err = decode(&[1u32, 9], 1, 2, &enc, None, &w, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn answer_attention_context_is_identical_across_positions() {
        // A single key/value position makes every softmax row the constant 1,
        // so the pre-residual context cannot depend on the query position.
        let (cfg, w) = setup(true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 6;
        let h = Tensor::new(
            &[1, m, cfg.d],
            (0..m * cfg.d)
                .map(|_| rng.random_range(-2.0f32..2.0))
                .collect(),
        );
        let e_a = Tensor::new(
            &[1, cfg.d],
            (0..cfg.d).map(|_| rng.random_range(-2.0f32..2.0)).collect(),
        );
        let kv = e_a.reshape(&[1, 1, cfg.d]).unwrap();
        let aw = &w.decoder[0].aa.as_ref().unwrap().attn;
        let (ctx, attn) = multi_head_attention(&h, &kv, aw, cfg.heads, None).unwrap();
        for &wt in attn.data() {
            assert!((wt - 1.0).abs() < 1e-6);
        }
        let first = &ctx.data()[..cfg.d];
        for pos in 1..m {
            for c in 0..cfg.d {
                let diff = (ctx.data()[pos * cfg.d + c] - first[c]).abs();
                assert!(diff < 1e-6, "context varies at position {pos}");
            }
        }
    }

    #[test]
    fn answer_embedding_changes_logits_only_when_aa_enabled() {
        let (cfg_aa, w_aa) = setup(true);
        let enc = encode_src(&cfg_aa, &w_aa);
        let e1 = Tensor::new(&[1, cfg_aa.d], vec![0.3f32; cfg_aa.d]);
        let e2 = Tensor::new(&[1, cfg_aa.d], vec![-0.9f32; cfg_aa.d]);
        let a = decode(&[1u32, 9], 1, 2, &enc, Some(&e1), &w_aa, &cfg_aa, None).unwrap();
        let b = decode(&[1u32, 9], 1, 2, &enc, Some(&e2), &w_aa, &cfg_aa, None).unwrap();
        assert_ne!(a.data(), b.data());

        let (cfg_plain, w_plain) = setup(false);
        let enc = encode_src(&cfg_plain, &w_plain);
        let a = decode(&[1u32, 9], 1, 2, &enc, Some(&e1), &w_plain, &cfg_plain, None).unwrap();
        let b = decode(&[1u32, 9], 1, 2, &enc, Some(&e2), &w_plain, &cfg_plain, None).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn causality_holds_for_every_conditioning_combination() {
        for bits in 0..16u32 {
            let mut cfg = ModelConfig::toy(30);
            cfg.conditioning = ConditioningConfig {
                ap: bits & 1 != 0,
                rs: bits & 2 != 0,
                cp: bits & 4 != 0,
                aa: bits & 8 != 0,
                k: DEFAULT_CP_K,
            };
            let w = ModelWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(bits as u64));
            let mut enc = encode_src(&cfg, &w);
            let e_a = cfg.conditioning.needs_answer_embedding().then(|| {
                crate::model::encoder::answer_embedding(
                    &[9u32, 10],
                    &[1u8, 1],
                    1,
                    2,
                    &w,
                    &cfg,
                    None,
                )
                .unwrap()
            });
            if cfg.conditioning.cp {
                enc.states = crate::model::cp::cp_transform(
                    &enc.states,
                    e_a.as_ref().unwrap(),
                    &enc.flags,
                    cfg.conditioning.k,
                )
                .unwrap();
            }
            let a = decode(&[1u32, 9, 10, 11], 1, 4, &enc, e_a.as_ref(), &w, &cfg, None).unwrap();
            let b = decode(&[1u32, 9, 25, 26], 1, 4, &enc, e_a.as_ref(), &w, &cfg, None).unwrap();
            for i in 0..2 * cfg.vocab {
                let diff = (a.data()[i] - b.data()[i]).abs();
                assert!(diff < 1e-5, "mode bits {bits:#06b}: leak {diff}");
            }
        }
    }

    #[test]
    fn tied_projection_tracks_embedding_weights() {
        // Zeroing one vocabulary row of the embedding pins that logit to
        // zero contribution from the tied projection (plus nothing else),
        // which distinguishes tying from an independent output matrix.
        let (cfg, mut w) = setup(false);
        let enc = encode_src(&cfg, &w);
        let before = decode(&[1u32, 9], 1, 2, &enc, None, &w, &cfg, None).unwrap();
        let mut data = w.token_embedding.data().to_vec();
        let target = 17usize;
        for c in 0..cfg.d {
            data[target * cfg.d + c] = 0.0;
        }
        w.token_embedding = Tensor::parameter(&[cfg.vocab, cfg.d], data);
        // Re-encode: the encoder consumed ids over unrelated rows, so only
        // the target logit is guaranteed to change.
        let enc = encode(&[5u32, 6, 7, 8, 0], &[1, 1, 1, 1, 0], 1, 5, &w, &cfg, None).unwrap();
        let after = decode(&[1u32, 9], 1, 2, &enc, None, &w, &cfg, None).unwrap();
        assert_eq!(after.data()[target], 0.0);
        assert_ne!(before.data()[target], after.data()[target]);
    }
}
