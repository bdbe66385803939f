//! Product-based conditioning of the encoded passage on the answer.
//!
//! Each encoder state row is scored against the pooled answer embedding by a
//! dot product; the scores are softmax-normalized over the sequence (padding
//! masked out) and each row is rescaled by `k * weight`.

use super::attention::MASK_OFF;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Transforms encoder states `[b, n, d]` given the answer embedding `[b, d]`
/// and source validity flags (`[b, n]`, 1 = real token). Output row `i` is
/// `k * p_i * states_i` with `p = softmax(states · e_a)` over the sequence.
pub fn cp_transform<T: Scalar>(
    states: &Tensor<T>,
    e_a: &Tensor<T>,
    flags: &[u8],
    k: f64,
) -> Result<Tensor<T>> {
    let (b, n, d) = match states.shape() {
        [b, n, d] => (*b, *n, *d),
        _ => {
            return Err(Error::Contract(format!(
                "cp_transform expects [batch, len, d] states, got {:?}",
                states.shape()
            )))
        }
    };
    if e_a.shape() != [b, d] {
        return Err(Error::ShapeMismatch {
            op: "cp_transform",
            lhs: states.shape().to_vec(),
            rhs: e_a.shape().to_vec(),
        });
    }
    if flags.len() != b * n {
        return Err(Error::Contract(format!(
            "cp_transform flags cover {} positions, expected {}",
            flags.len(),
            b * n
        )));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::Config(format!(
            "product conditioning constant k must be positive and finite, got {k}"
        )));
    }

    let scores = states.matmul(&e_a.reshape(&[b, d, 1])?)?; // [b, n, 1]
    let mask = Tensor::new(
        &[b, n, 1],
        flags
            .iter()
            .map(|&f| if f != 0 { T::zero() } else { T::from_f64(MASK_OFF) })
            .collect(),
    );
    let p = scores
        .add(&mask)?
        .reshape(&[b, n])?
        .softmax()
        .reshape(&[b, n, 1])?;
    Ok(states.mul(&p)?.scale(T::from_f64(k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_orthogonal_to_answer_scale_by_k_over_n() {
        // All dot products are 0, the softmax is uniform, and every row is
        // scaled by exactly k / n.
        let n = 4;
        let k = 100.0;
        let states = Tensor::new(
            &[1, n, 2],
            vec![1.0f64, 0.0, 2.0, 0.0, -3.0, 0.0, 0.5, 0.0],
        );
        let e_a = Tensor::new(&[1, 2], vec![0.0, 5.0]);
        let out = cp_transform(&states, &e_a, &[1, 1, 1, 1], k).unwrap();
        for (i, (&got, &src)) in out.data().iter().zip(states.data()).enumerate() {
            let want = src * k / n as f64;
            assert!((got - want).abs() < 1e-6, "element {i}: {got} vs {want}");
        }
    }

    #[test]
    fn k_equal_n_with_uniform_scores_reproduces_input() {
        let n = 5;
        let states = Tensor::new(&[1, n, 3], (0..15).map(|i| i as f64 * 0.3 - 2.0).collect());
        let e_a = Tensor::new(&[1, 3], vec![0.0; 3]);
        let out = cp_transform(&states, &e_a, &[1; 5], n as f64).unwrap();
        for (got, want) in out.data().iter().zip(states.data()) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn padding_rows_are_excluded_from_the_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (b, n, d) = (2, 6, 3);
        let states = Tensor::new(
            &[b, n, d],
            (0..b * n * d)
                .map(|_| rng.random_range(-1.0f64..1.0))
                .collect(),
        );
        let e_a = Tensor::new(
            &[b, d],
            (0..b * d).map(|_| rng.random_range(-1.0f64..1.0)).collect(),
        );
        let flags = [1u8, 1, 1, 0, 0, 0, 1, 1, 1, 1, 1, 0];
        let out = cp_transform(&states, &e_a, &flags, 10.0).unwrap();
        // Recompute weights over real rows only; they must sum to 1, and the
        // padded output rows must be (numerically) zero.
        for row in 0..b {
            let mut total = 0.0;
            for i in 0..n {
                if flags[row * n + i] == 0 {
                    for c in 0..d {
                        assert!(out.data()[(row * n + i) * d + c].abs() < 1e-6);
                    }
                } else {
                    // weight_i = out_i / (k * state_i) for any nonzero channel
                    let base = (row * n + i) * d;
                    let c = (0..d)
                        .max_by(|&x, &y| {
                            states.data()[base + x]
                                .abs()
                                .total_cmp(&states.data()[base + y].abs())
                        })
                        .unwrap();
                    total += out.data()[base + c] / (10.0 * states.data()[base + c]);
                }
            }
            assert!((total - 1.0).abs() < 1e-9, "row {row} weights sum {total}");
        }
    }

    #[test]
    fn aligned_row_dominates_under_large_scores() {
        // Row 2 has a huge dot product with the answer; its weight saturates
        // to 1 and the other rows vanish.
        let states = Tensor::new(
            &[1, 3, 2],
            vec![1.0f64, 0.0, 0.0, 1.0, 50.0, 50.0],
        );
        let e_a = Tensor::new(&[1, 2], vec![3.0, 3.0]);
        let out = cp_transform(&states, &e_a, &[1, 1, 1], 2.0).unwrap();
        assert!(out.data()[0].abs() < 1e-9);
        assert!((out.data()[4] - 100.0).abs() < 1e-6);
        assert!((out.data()[5] - 100.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_k_and_shapes_rejected() {
        let states = Tensor::new(&[1, 2, 2], vec![0.0f64; 4]);
        let e_a = Tensor::new(&[1, 2], vec![0.0; 2]);
        assert!(cp_transform(&states, &e_a, &[1, 1], 0.0).is_err());
        assert!(cp_transform(&states, &e_a, &[1, 1], -3.0).is_err());
        assert!(cp_transform(&states, &e_a, &[1], 1.0).is_err());
        let bad = Tensor::new(&[1, 3], vec![0.0f64; 3]);
        assert!(cp_transform(&states, &bad, &[1, 1], 1.0).is_err());
    }
}
