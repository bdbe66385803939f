//! Central-finite-difference verification of backward rules.
//!
//! Every check runs in f64: the loss is rebuilt from perturbed copies of each
//! input, the numeric derivative `(f(x+h) - f(x-h)) / 2h` is compared against
//! the analytic gradient, and the worst relative error is reported.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{embedding, no_grad, Tensor};

/// Epsilon used by every finite-difference probe.
pub const FD_EPSILON: f64 = 1e-3;
/// Tolerance for individual-op checks.
pub const OP_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn new(op: &str, max_rel_error: f64, tolerance: f64) -> Self {
        GradCheckReport {
            op: op.to_string(),
            max_rel_error,
            epsilon: FD_EPSILON,
            tolerance,
            passed: max_rel_error < tolerance,
        }
    }

    /// Folds another measurement of the same op into this report.
    fn absorb(&mut self, other: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.passed = self.max_rel_error < self.tolerance;
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} max rel err {:.3e} (eps {:.0e}, tol {:.0e}) ... {}",
            self.op,
            self.max_rel_error,
            self.epsilon,
            self.tolerance,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

/// Checks the analytic gradients of `f` w.r.t. every tensor in `inputs`
/// against central finite differences.
///
/// `f` must build a fresh graph from the tensors it is handed and return a
/// scalar loss. `inputs` must be parameter tensors.
pub fn grad_check<F>(op: &str, inputs: &[Tensor<f64>], tolerance: f64, f: F) -> GradCheckReport
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    for t in inputs {
        t.zero_grad();
    }
    let loss = f(inputs);
    loss.backward().expect("grad_check loss must be scalar");
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| {
            t.grad()
                .unwrap_or_else(|| panic!("{op}: input did not receive a gradient"))
        })
        .collect();

    let mut max_rel = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let numeric = no_grad(|| {
                let probe = |delta: f64| {
                    let rebuilt: Vec<Tensor<f64>> = inputs
                        .iter()
                        .enumerate()
                        .map(|(ii, tt)| {
                            if ii == i {
                                let mut data = tt.data().to_vec();
                                data[j] += delta;
                                Tensor::new(tt.shape(), data)
                            } else {
                                tt.clone()
                            }
                        })
                        .collect();
                    f(&rebuilt).item()
                };
                (probe(FD_EPSILON) - probe(-FD_EPSILON)) / (2.0 * FD_EPSILON)
            });
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    for t in inputs {
        t.zero_grad();
    }
    GradCheckReport::new(op, max_rel, tolerance)
}

pub(crate) fn rand_param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let data = (0..super::shape::numel(shape))
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::parameter(shape, data)
}

/// Random values bounded away from zero, for ops with a kink at 0.
fn rand_param_offset(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let data = (0..super::shape::numel(shape))
        .map(|_| {
            let v: f64 = rng.random_range(0.2..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::parameter(shape, data)
}

/// Constant projection so the scalar loss weights every output element
/// differently; a plain sum would hide sign or permutation mistakes that
/// cancel across elements.
pub(crate) fn weighted_sum(out: &Tensor<f64>, rng_seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    out.mul(&Tensor::new(out.shape(), w)).unwrap().sum()
}

/// Gradient checks for every registered op, each over at least three input
/// shapes (including broadcasting cases where the op supports it).
pub fn op_suite() -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9d1f);
    let mut reports: Vec<GradCheckReport> = Vec::new();
    let push = |reports: &mut Vec<GradCheckReport>, r: GradCheckReport| {
        match reports.iter_mut().find(|have| have.op == r.op) {
            Some(have) => have.absorb(&r),
            None => reports.push(r),
        }
    };

    let add_shapes: [(&[usize], &[usize]); 3] = [(&[4], &[4]), (&[2, 3], &[3]), (&[2, 1, 3], &[4, 1])];
    for (w, (sa, sb)) in add_shapes.iter().enumerate() {
        let inputs = [rand_param(&mut rng, sa), rand_param(&mut rng, sb)];
        let r = grad_check("add", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].add(&t[1]).unwrap(), 11 + w as u64)
        });
        push(&mut reports, r);
        let inputs = [rand_param(&mut rng, sa), rand_param(&mut rng, sb)];
        let r = grad_check("mul", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].mul(&t[1]).unwrap(), 23 + w as u64)
        });
        push(&mut reports, r);
    }

    let mm_shapes: [(&[usize], &[usize]); 3] =
        [(&[2, 3], &[3, 2]), (&[2, 2, 3], &[2, 3, 4]), (&[2, 2, 3], &[3, 2])];
    for (w, (sa, sb)) in mm_shapes.iter().enumerate() {
        let inputs = [rand_param(&mut rng, sa), rand_param(&mut rng, sb)];
        let r = grad_check("matmul", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].matmul(&t[1]).unwrap(), 31 + w as u64)
        });
        push(&mut reports, r);
    }

    let row_shapes: [&[usize]; 3] = [&[5], &[3, 4], &[2, 2, 3]];
    for (w, sh) in row_shapes.iter().enumerate() {
        let inputs = [rand_param(&mut rng, sh)];
        let r = grad_check("softmax", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].softmax(), 41 + w as u64)
        });
        push(&mut reports, r);
        let inputs = [rand_param(&mut rng, sh)];
        let r = grad_check("log_softmax", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].log_softmax(), 53 + w as u64)
        });
        push(&mut reports, r);
        let inputs = [rand_param_offset(&mut rng, sh)];
        let r = grad_check("relu", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].relu(), 61 + w as u64)
        });
        push(&mut reports, r);
        let inputs = [rand_param(&mut rng, sh)];
        let r = grad_check("scale", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].scale(-1.7), 67 + w as u64)
        });
        push(&mut reports, r);
    }

    let inputs = [rand_param(&mut rng, &[2, 3])];
    let r = grad_check("softmax_axis", &inputs, OP_TOLERANCE, |t| {
        weighted_sum(&t[0].softmax_axis(0).unwrap(), 71)
    });
    push(&mut reports, r);
    let inputs = [rand_param(&mut rng, &[2, 2, 2])];
    let r = grad_check("softmax_axis", &inputs, OP_TOLERANCE, |t| {
        weighted_sum(&t[0].softmax_axis(1).unwrap(), 72)
    });
    push(&mut reports, r);
    let inputs = [rand_param(&mut rng, &[4, 2])];
    let r = grad_check("softmax_axis", &inputs, OP_TOLERANCE, |t| {
        weighted_sum(&t[0].softmax_axis(1).unwrap(), 73)
    });
    push(&mut reports, r);

    for (w, d) in [3usize, 4, 6].into_iter().enumerate() {
        let inputs = [
            rand_param(&mut rng, &[2, d]),
            rand_param(&mut rng, &[d]),
            rand_param(&mut rng, &[d]),
        ];
        let r = grad_check("layer_norm", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].layer_norm(&t[1], &t[2], 1e-5).unwrap(), 79 + w as u64)
        });
        push(&mut reports, r);
    }

    let reshape_cases: [(&[usize], &[usize]); 3] = [(&[6], &[2, 3]), (&[2, 3], &[3, 2]), (&[2, 2, 2], &[8])];
    for (w, (from, to)) in reshape_cases.iter().enumerate() {
        let inputs = [rand_param(&mut rng, from)];
        let r = grad_check("reshape", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].reshape(to).unwrap(), 83 + w as u64)
        });
        push(&mut reports, r);
    }

    let perm_cases: [(&[usize], &[usize]); 3] =
        [(&[2, 3], &[1, 0]), (&[2, 3, 4], &[2, 0, 1]), (&[2, 2, 2, 2], &[3, 1, 2, 0])];
    for (w, (sh, perm)) in perm_cases.iter().enumerate() {
        let inputs = [rand_param(&mut rng, sh)];
        let r = grad_check("permute", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].permute(perm).unwrap(), 89 + w as u64)
        });
        push(&mut reports, r);
    }

    for (w, sh) in [&[2usize, 3] as &[usize], &[2, 3, 4], &[4, 5]].into_iter().enumerate() {
        let inputs = [rand_param(&mut rng, sh)];
        let r = grad_check("transpose_last", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].transpose_last().unwrap(), 97 + w as u64)
        });
        push(&mut reports, r);
    }

    let axis_cases: [(&[usize], usize); 3] = [(&[4], 0), (&[2, 3], 0), (&[2, 3, 4], 1)];
    for (w, (sh, axis)) in axis_cases.iter().enumerate() {
        let inputs = [rand_param(&mut rng, sh)];
        let r = grad_check("sum_axis", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].sum_axis(*axis).unwrap(), 101 + w as u64)
        });
        push(&mut reports, r);
        let inputs = [rand_param(&mut rng, sh)];
        let r = grad_check("sum", &inputs, OP_TOLERANCE, |t| t[0].sum());
        push(&mut reports, r);
    }

    let gather_cases: [(&[usize], &[usize]); 3] =
        [(&[3, 4], &[1, 3, 0]), (&[2, 2, 3], &[0, 2, 1, 0]), (&[1, 5], &[4])];
    for (w, (sh, ids)) in gather_cases.iter().enumerate() {
        let inputs = [rand_param(&mut rng, sh)];
        let r = grad_check("gather_last", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&t[0].gather_last(ids).unwrap(), 103 + w as u64)
        });
        push(&mut reports, r);
    }

    let emb_cases: [(usize, usize, &[u32], &[usize]); 3] = [
        (5, 3, &[0, 4, 4], &[3]),
        (4, 2, &[1, 1, 2, 3], &[2, 2]),
        (3, 4, &[2], &[1]),
    ];
    for (w, (vocab, dim, ids, prefix)) in emb_cases.iter().enumerate() {
        let inputs = [rand_param(&mut rng, &[*vocab, *dim])];
        let r = grad_check("embedding", &inputs, OP_TOLERANCE, |t| {
            weighted_sum(&embedding(&t[0], ids, prefix).unwrap(), 107 + w as u64)
        });
        push(&mut reports, r);
    }

    reports
}

/// A deliberately broken op whose backward rule flips the gradient sign.
/// Used as a fault-injection fixture: the checker must flag it.
pub fn sign_flip_fixture_report() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbad);
    let inputs = [rand_param_offset(&mut rng, &[3, 3])];
    grad_check("square (injected sign flip)", &inputs, OP_TOLERANCE, |t| {
        let x = &t[0];
        let data: Vec<f64> = x.data().iter().map(|v| v * v).collect();
        let x2 = x.clone();
        let broken = Tensor::from_op(
            x.shape().to_vec(),
            data,
            vec![x.clone()],
            move |_, g| {
                // Correct rule is +2x·g; the sign is flipped on purpose.
                vec![Some(
                    x2.data().iter().zip(g).map(|(&xv, &gv)| -2.0 * xv * gv).collect(),
                )]
            },
        );
        weighted_sum(&broken, 113)
    })
}
