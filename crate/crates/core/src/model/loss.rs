//! Token-level cross-entropy and the full training forward pass.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::cp::cp_transform;
use super::decoder::decode;
use super::encoder::{answer_embedding, encode, EncoderOutput};
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::text::Batch;

/// Mean negative log-likelihood of `labels` under `logits` (`[b, m, vocab]`),
/// averaged over positions where `mask` is non-zero.
pub fn cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u32],
    mask: &[u8],
) -> Result<Tensor<T>> {
    let (b, m) = match logits.shape() {
        [b, m, _] => (*b, *m),
        _ => {
            return Err(Error::Contract(format!(
                "cross_entropy expects [batch, len, vocab] logits, got {:?}",
                logits.shape()
            )))
        }
    };
    if labels.len() != b * m || mask.len() != b * m {
        return Err(Error::Contract(format!(
            "cross_entropy got {} labels / {} mask entries for {} positions",
            labels.len(),
            mask.len(),
            b * m
        )));
    }
    let count = mask.iter().filter(|&&f| f != 0).count();
    if count == 0 {
        return Err(Error::Contract(
            "cross_entropy requires at least one unmasked label".into(),
        ));
    }
    let ids: Vec<usize> = labels.iter().map(|&t| t as usize).collect();
    let picked = logits.log_softmax().gather_last(&ids)?; // [b, m]
    let keep = Tensor::new(
        &[b, m],
        mask.iter()
            .map(|&f| if f != 0 { T::one() } else { T::zero() })
            .collect(),
    );
    Ok(picked
        .mul(&keep)?
        .sum()
        .scale(T::from_f64(-1.0 / count as f64)))
}

/// Encoder-side work shared by training and generation: encode the source,
/// pool the answer embedding when any answer mechanism needs it, and apply
/// the product conditioning to the encoder states.
#[derive(Debug, Clone)]
pub struct PreparedSource<T: Scalar> {
    pub enc: EncoderOutput<T>,
    pub e_a: Option<Tensor<T>>,
}

pub fn prepare_source<T: Scalar>(
    batch: &Batch,
    weights: &ModelWeights<T>,
    cfg: &ModelConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<PreparedSource<T>> {
    let mut enc = encode(
        &batch.src_ids,
        &batch.src_mask,
        batch.size,
        batch.src_len,
        weights,
        cfg,
        rng.as_deref_mut(),
    )?;
    let e_a = if cfg.conditioning.needs_answer_embedding() {
        Some(answer_embedding(
            &batch.answer_ids,
            &batch.answer_mask,
            batch.size,
            batch.answer_len,
            weights,
            cfg,
            rng.as_deref_mut(),
        )?)
    } else {
        None
    };
    if cfg.conditioning.cp {
        let e_a = e_a.as_ref().expect("cp implies an answer embedding");
        enc.states = cp_transform(&enc.states, e_a, &enc.flags, cfg.conditioning.k)?;
    }
    Ok(PreparedSource { enc, e_a })
}

/// Full teacher-forced pass: returns the scalar training loss for a batch.
pub fn forward_loss<T: Scalar>(
    batch: &Batch,
    weights: &ModelWeights<T>,
    cfg: &ModelConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<T>> {
    let src = prepare_source(batch, weights, cfg, rng.as_deref_mut())?;
    let logits = decode(
        &batch.decoder_ids,
        batch.size,
        batch.tgt_len,
        &src.enc,
        src.e_a.as_ref(),
        weights,
        cfg,
        rng,
    )?;
    cross_entropy(&logits, &batch.label_ids, &batch.label_mask)
}
