//! Adam optimizer with bias correction and global gradient-norm clipping.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum global gradient norm; gradients are rescaled above it.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug)]
pub struct Adam<T: Scalar> {
    pub cfg: AdamConfig,
    step: u64,
    m: HashMap<String, Vec<T>>,
    v: HashMap<String, Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Completed update count (the `t` in the bias corrections).
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn moment_m(&self, name: &str) -> Option<&[T]> {
        self.m.get(name).map(|v| v.as_slice())
    }

    pub fn moment_v(&self, name: &str) -> Option<&[T]> {
        self.v.get(name).map(|v| v.as_slice())
    }

    /// Restores saved moment vectors (used when resuming from a checkpoint).
    pub fn set_moments(&mut self, name: &str, m: Vec<T>, v: Vec<T>) {
        self.m.insert(name.to_string(), m);
        self.v.insert(name.to_string(), v);
    }

    /// Takes the accumulated gradients out of `weights`, clips them to the
    /// configured global norm, and applies one Adam update at rate `lr`.
    ///
    /// Parameters without a gradient are treated as having zero gradient and
    /// do not move. Returns the pre-clip global gradient norm.
    pub fn step(&mut self, weights: &mut ModelWeights<T>, lr: f64) -> Result<f64> {
        // Pass 1: drain gradients and validate them.
        let mut grads: Vec<(String, Option<Vec<T>>)> = Vec::new();
        let mut bad: Option<String> = None;
        weights.visit_mut(&mut |name, t| {
            let g = t.take_grad();
            if bad.is_none() {
                if let Some(g) = &g {
                    if g.iter().any(|x| !x.is_finite()) {
                        bad = Some(name.clone());
                    }
                }
            }
            grads.push((name, g));
        });
        if let Some(name) = bad {
            return Err(Error::NonFiniteGradient { name });
        }

        let mut sq_sum = 0.0f64;
        for (_, g) in &grads {
            if let Some(g) = g {
                for x in g {
                    let v = x.as_f64();
                    sq_sum += v * v;
                }
            }
        }
        let norm = sq_sum.sqrt();
        let scale = match self.cfg.clip_norm {
            Some(clip) if norm > clip => clip / norm,
            _ => 1.0,
        };

        let t_step = self.step + 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(t_step as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(t_step as i32);
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);

        // Pass 2: apply the update in declaration order.
        let mut idx = 0usize;
        weights.visit_mut(&mut |name, t| {
            let (gname, g) = &grads[idx];
            debug_assert_eq!(&name, gname, "visit order changed between passes");
            idx += 1;
            let n = t.numel();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
            let v = self.v.entry(name).or_insert_with(|| vec![T::zero(); n]);
            let mut data: Vec<T> = t.data().to_vec();
            for i in 0..n {
                let gi = g.as_ref().map_or(0.0, |g| g[i].as_f64()) * scale;
                let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
                let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
                m[i] = T::from_f64(mi);
                v[i] = T::from_f64(vi);
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                data[i] = T::from_f64(data[i].as_f64() - update);
            }
            *t = Tensor::parameter(t.shape(), data);
        });
        self.step = t_step;
        Ok(norm)
    }
}
