//! Scaled dot-product and multi-head attention.

use super::weights::AttentionWeights;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Additive mask value for disallowed positions. Large enough that the
/// corresponding softmax weight underflows to < 1e-9.
pub const MASK_OFF: f64 = -1e9;

/// Scaled dot-product attention.
///
/// `q`: `[.., m, d_k]`, `k`: `[.., s, d_k]`, `v`: `[.., s, d_v]`;
/// `mask` is an additive tensor broadcastable to the score shape `[.., m, s]`
/// (0 where attention is allowed, `MASK_OFF` where it is not).
///
/// Returns `(output [.., m, d_v], weights [.., m, s])` with the weights taken
/// after the softmax, so callers can assert normalization and masking.
pub fn attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d_k = *q.shape().last().ok_or_else(|| {
        Error::Contract("attention requires rank >= 2 inputs".to_string())
    })?;
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut scores = q.matmul(&k.transpose_last()?)?.scale(T::from_f64(scale));
    if let Some(m) = mask {
        scores = scores.add(m)?;
    }
    let weights = scores.softmax();
    let out = weights.matmul(v)?;
    Ok((out, weights))
}

/// Multi-head attention over projected inputs.
///
/// `x_q`: `[b, m, d]`, `x_kv`: `[b, s, d]`. The four projections are applied,
/// heads are split, `attention` runs per head, and the heads are re-merged
/// through the output projection. Returns `(output [b, m, d],
/// weights [b, heads, m, s])`.
pub fn multi_head_attention<T: Scalar>(
    x_q: &Tensor<T>,
    x_kv: &Tensor<T>,
    w: &AttentionWeights<T>,
    heads: usize,
    mask: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, m, d) = dims3(x_q, "multi_head_attention query")?;
    let (bk, s, dk) = dims3(x_kv, "multi_head_attention key/value")?;
    if b != bk || d != dk {
        return Err(Error::ShapeMismatch {
            op: "multi_head_attention",
            lhs: x_q.shape().to_vec(),
            rhs: x_kv.shape().to_vec(),
        });
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "attention width {d} is not divisible into {heads} heads"
        )));
    }
    let dh = d / heads;

    let split = |x: &Tensor<T>, wp: &Tensor<T>, bp: &Tensor<T>, len: usize| -> Result<Tensor<T>> {
        x.matmul(wp)?
            .add(bp)?
            .reshape(&[b, len, heads, dh])?
            .permute(&[0, 2, 1, 3])
    };
    let q = split(x_q, &w.w_q, &w.b_q, m)?;
    let k = split(x_kv, &w.w_k, &w.b_k, s)?;
    let v = split(x_kv, &w.w_v, &w.b_v, s)?;

    let (ctx, weights) = attention(&q, &k, &v, mask)?;
    let merged = ctx.permute(&[0, 2, 1, 3])?.reshape(&[b, m, d])?;
    let out = merged.matmul(&w.w_o)?.add(&w.b_o)?;
    Ok((out, weights))
}

fn dims3<T: Scalar>(x: &Tensor<T>, what: &'static str) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(Error::Contract(format!(
            "{what} must be rank 3, got shape {:?}",
            x.shape()
        ))),
    }
}

/// Causal mask `[1, 1, m, m]`: position `i` may attend to positions `<= i`.
pub fn causal_mask<T: Scalar>(m: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            data[i * m + j] = T::from_f64(MASK_OFF);
        }
    }
    Tensor::new(&[1, 1, m, m], data)
}

/// Key-padding mask `[b, 1, 1, s]` from per-position validity flags
/// (1 = real token, 0 = padding).
pub fn padding_mask<T: Scalar>(mask: &[u8], b: usize, s: usize) -> Tensor<T> {
    assert_eq!(mask.len(), b * s, "padding mask length mismatch");
    let data = mask
        .iter()
        .map(|&m| if m != 0 { T::zero() } else { T::from_f64(MASK_OFF) })
        .collect();
    Tensor::new(&[b, 1, 1, s], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data)
    }

    #[test]
    fn zero_query_yields_column_mean_of_values() {
        // All-zero queries give uniform weights, so the output is the mean
        // of the value rows.
        let q = t(&[1, 2, 3], vec![0.0; 6]);
        let k = t(&[1, 4, 3], (0..12).map(|i| i as f64 * 0.1).collect());
        let v = t(
            &[1, 4, 2],
            vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0],
        );
        let (out, w) = attention(&q, &k, &v, None).unwrap();
        for row in 0..2 {
            assert!((out.data()[row * 2] - 2.5).abs() < 1e-12);
            assert!((out.data()[row * 2 + 1] - 25.0).abs() < 1e-12);
        }
        for &x in w.data() {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_scores_select_single_value_row() {
        // One key aligned with the query at huge magnitude dominates the
        // softmax, so attention returns that key's value row.
        let q = t(&[1, 1, 2], vec![100.0, 0.0]);
        let k = t(&[1, 3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]);
        let v = t(&[1, 3, 2], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let (out, w) = attention(&q, &k, &v, None).unwrap();
        assert!((out.data()[0] - 5.0).abs() < 1e-9);
        assert!((out.data()[1] - 6.0).abs() < 1e-9);
        assert!(w.data()[0] > 1.0 - 1e-12);
    }

    #[test]
    fn masked_positions_receive_negligible_weight() {
        let q = t(&[1, 2, 2], vec![0.3, -0.1, 0.9, 0.4]);
        let k = t(&[1, 3, 2], vec![0.1, 0.2, -0.5, 0.7, 0.8, -0.2]);
        let v = t(&[1, 3, 2], (0..6).map(|i| i as f64).collect());
        let mask = t(&[1, 1, 3], vec![0.0, 0.0, MASK_OFF]);
        let (_, w) = attention(&q, &k, &v, Some(&mask)).unwrap();
        for row in 0..2 {
            let rw = &w.data()[row * 3..row * 3 + 3];
            assert!(rw[2] < 1e-9, "masked weight {}", rw[2]);
            assert!((rw.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_head_matches_direct_projection_composition() {
        // With heads = 1 the multi-head path must reduce to plain attention
        // over the projected tensors followed by the output projection.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rnd = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            t(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        let x_q = rnd(&[2, 3, 4]);
        let x_kv = rnd(&[2, 5, 4]);
        let w = AttentionWeights {
            w_q: rnd(&[4, 4]),
            b_q: rnd(&[4]),
            w_k: rnd(&[4, 4]),
            b_k: rnd(&[4]),
            w_v: rnd(&[4, 4]),
            b_v: rnd(&[4]),
            w_o: rnd(&[4, 4]),
            b_o: rnd(&[4]),
        };
        let (got, _) = multi_head_attention(&x_q, &x_kv, &w, 1, None).unwrap();

        let q = x_q.matmul(&w.w_q).unwrap().add(&w.b_q).unwrap();
        let k = x_kv.matmul(&w.w_k).unwrap().add(&w.b_k).unwrap();
        let v = x_kv.matmul(&w.w_v).unwrap().add(&w.b_v).unwrap();
        let (ctx, _) = attention(&q, &k, &v, None).unwrap();
        let want = ctx.matmul(&w.w_o).unwrap().add(&w.b_o).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let m: Tensor<f64> = causal_mask(3);
        assert_eq!(m.shape(), &[1, 1, 3, 3]);
        for i in 0..3 {
            for j in 0..3 {
                let v = m.data()[i * 3 + j];
                if j > i {
                    assert_eq!(v, MASK_OFF);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn padding_mask_marks_pad_positions() {
        let m: Tensor<f64> = padding_mask(&[1, 1, 0, 1, 0, 0], 2, 3);
        assert_eq!(m.shape(), &[2, 1, 1, 3]);
        assert_eq!(m.data(), &[0.0, 0.0, MASK_OFF, 0.0, MASK_OFF, MASK_OFF]);
    }

    #[test]
    fn head_split_produces_requested_weight_shape() {
        let x = t(&[1, 4, 6], (0..24).map(|i| (i as f64).sin()).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rnd = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            t(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        let w = AttentionWeights {
            w_q: rnd(&[6, 6]),
            b_q: rnd(&[6]),
            w_k: rnd(&[6, 6]),
            b_k: rnd(&[6]),
            w_v: rnd(&[6, 6]),
            b_v: rnd(&[6]),
            w_o: rnd(&[6, 6]),
            b_o: rnd(&[6]),
        };
        let (out, weights) = multi_head_attention(&x, &x, &w, 3, None).unwrap();
        assert_eq!(out.shape(), &[1, 4, 6]);
        assert_eq!(weights.shape(), &[1, 3, 4, 4]);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let x = t(&[1, 2, 6], vec![0.0; 12]);
        let w = AttentionWeights {
            w_q: t(&[6, 6], vec![0.0; 36]),
            b_q: t(&[6], vec![0.0; 6]),
            w_k: t(&[6, 6], vec![0.0; 36]),
            b_k: t(&[6], vec![0.0; 6]),
            w_v: t(&[6, 6], vec![0.0; 36]),
            b_v: t(&[6], vec![0.0; 6]),
            w_o: t(&[6, 6], vec![0.0; 36]),
            b_o: t(&[6], vec![0.0; 6]),
        };
        assert!(multi_head_attention(&x, &x, &w, 4, None).is_err());
        assert!(multi_head_attention(&x, &x, &w, 0, None).is_err());
    }

    proptest! {
        // Randomized attention calls: every weight row must sum to 1 and
        // every masked position must receive < 1e-9 (f32, the training type).
        #[test]
        fn weight_rows_normalized_and_masked_entries_negligible(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = rng.random_range(1..3usize);
            let h = [1usize, 2, 4][rng.random_range(0..3usize)];
            let mseq = rng.random_range(1..6usize);
            let s = rng.random_range(1..7usize);
            let dh = [1usize, 2, 4][rng.random_range(0..3usize)];
            let fill = |shape: &[usize], rng: &mut ChaCha8Rng| -> Tensor<f32> {
                let n: usize = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| rng.random_range(-3.0f32..3.0)).collect())
            };
            let q = fill(&[b, h, mseq, dh], &mut rng);
            let k = fill(&[b, h, s, dh], &mut rng);
            let v = fill(&[b, h, s, dh], &mut rng);
            // Random key mask; keep at least one key visible per batch row.
            let mut flags = vec![0u8; b * s];
            for row in 0..b {
                for j in 0..s {
                    flags[row * s + j] = u8::from(rng.random_range(0.0..1.0) < 0.7);
                }
                let any = flags[row * s..(row + 1) * s].iter().any(|&f| f != 0);
                if !any {
                    flags[row * s + rng.random_range(0..s)] = 1;
                }
            }
            let mask: Tensor<f32> = padding_mask(&flags, b, s);
            let (_, w) = attention(&q, &k, &v, Some(&mask)).unwrap();
            let wd = w.data();
            for bi in 0..b {
                for hi in 0..h {
                    for qi in 0..mseq {
                        let base = ((bi * h + hi) * mseq + qi) * s;
                        let row = &wd[base..base + s];
                        let total: f32 = row.iter().sum();
                        prop_assert!((total - 1.0).abs() <= 1e-6, "row sum {total}");
                        for j in 0..s {
                            if flags[bi * s + j] == 0 {
                                prop_assert!(row[j] < 1e-9, "masked weight {}", row[j]);
                            }
                        }
                    }
                }
            }
        }
    }
}
