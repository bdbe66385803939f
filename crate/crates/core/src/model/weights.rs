//! Model parameters: construction, initialization, and named traversal.
//!
//! Every parameter is reachable through `visit`/`visit_mut` in a fixed
//! declaration order; the optimizer, checkpoints, and gradient checks all key
//! off the names produced there.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

/// One standard normal draw via Box-Muller, identical across scalar types.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn randn<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(normal(rng) * std)).collect();
    Tensor::parameter(shape, data)
}

fn zeros_param<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::parameter(shape, vec![T::zero(); shape.iter().product()])
}

fn ones_param<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::parameter(shape, vec![T::one(); shape.iter().product()])
}

#[derive(Debug, Clone)]
pub struct LayerNormWeights<T: Scalar> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerNormWeights<T> {
    fn init(d: usize) -> Self {
        LayerNormWeights {
            gain: ones_param(&[d]),
            bias: zeros_param(&[d]),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}.gain"), &mut self.gain);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct AttentionWeights<T: Scalar> {
    pub w_q: Tensor<T>,
    pub b_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub b_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub b_v: Tensor<T>,
    pub w_o: Tensor<T>,
    pub b_o: Tensor<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentionWeights {
            w_q: randn(rng, &[d, d], INIT_STD),
            b_q: zeros_param(&[d]),
            w_k: randn(rng, &[d, d], INIT_STD),
            b_k: zeros_param(&[d]),
            w_v: randn(rng, &[d, d], INIT_STD),
            b_v: zeros_param(&[d]),
            w_o: randn(rng, &[d, d], INIT_STD),
            b_o: zeros_param(&[d]),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}.w_q"), &mut self.w_q);
        f(format!("{prefix}.b_q"), &mut self.b_q);
        f(format!("{prefix}.w_k"), &mut self.w_k);
        f(format!("{prefix}.b_k"), &mut self.b_k);
        f(format!("{prefix}.w_v"), &mut self.w_v);
        f(format!("{prefix}.b_v"), &mut self.b_v);
        f(format!("{prefix}.w_o"), &mut self.w_o);
        f(format!("{prefix}.b_o"), &mut self.b_o);
    }
}

#[derive(Debug, Clone)]
pub struct FeedForwardWeights<T: Scalar> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Scalar> FeedForwardWeights<T> {
    fn init(d: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForwardWeights {
            w1: randn(rng, &[d, d_ff], INIT_STD),
            b1: zeros_param(&[d_ff]),
            w2: randn(rng, &[d_ff, d], INIT_STD),
            b2: zeros_param(&[d]),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}.w1"), &mut self.w1);
        f(format!("{prefix}.b1"), &mut self.b1);
        f(format!("{prefix}.w2"), &mut self.w2);
        f(format!("{prefix}.b2"), &mut self.b2);
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayerWeights<T: Scalar> {
    pub ln1: LayerNormWeights<T>,
    pub self_attn: AttentionWeights<T>,
    pub ln2: LayerNormWeights<T>,
    pub ff: FeedForwardWeights<T>,
}

impl<T: Scalar> EncoderLayerWeights<T> {
    pub(crate) fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        EncoderLayerWeights {
            ln1: LayerNormWeights::init(cfg.d),
            self_attn: AttentionWeights::init(cfg.d, rng),
            ln2: LayerNormWeights::init(cfg.d),
            ff: FeedForwardWeights::init(cfg.d, cfg.d_ff, rng),
        }
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor<T>)) {
        self.ln1.visit_mut(&format!("{prefix}.ln1"), f);
        self.self_attn.visit_mut(&format!("{prefix}.self_attn"), f);
        self.ln2.visit_mut(&format!("{prefix}.ln2"), f);
        self.ff.visit_mut(&format!("{prefix}.ff"), f);
    }
}

/// The answer-attention block: one attention over the pooled answer
/// embedding plus its own (post-residual) layer norm.
#[derive(Debug, Clone)]
pub struct AaBlockWeights<T: Scalar> {
    pub attn: AttentionWeights<T>,
    pub norm: LayerNormWeights<T>,
}

impl<T: Scalar> AaBlockWeights<T> {
    pub(crate) fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        AaBlockWeights {
            attn: AttentionWeights::init(cfg.d, rng),
            norm: LayerNormWeights::init(cfg.d),
        }
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor<T>)) {
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayerWeights<T: Scalar> {
    pub ln1: LayerNormWeights<T>,
    pub self_attn: AttentionWeights<T>,
    pub ln2: LayerNormWeights<T>,
    pub cross_attn: AttentionWeights<T>,
    /// Present only when the answer-attention mechanism is active.
    pub aa: Option<AaBlockWeights<T>>,
    pub ln3: LayerNormWeights<T>,
    pub ff: FeedForwardWeights<T>,
}

impl<T: Scalar> DecoderLayerWeights<T> {
    pub(crate) fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        DecoderLayerWeights {
            ln1: LayerNormWeights::init(cfg.d),
            self_attn: AttentionWeights::init(cfg.d, rng),
            ln2: LayerNormWeights::init(cfg.d),
            cross_attn: AttentionWeights::init(cfg.d, rng),
            aa: cfg
                .conditioning
                .aa
                .then(|| AaBlockWeights::init(cfg, rng)),
            ln3: LayerNormWeights::init(cfg.d),
            ff: FeedForwardWeights::init(cfg.d, cfg.d_ff, rng),
        }
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor<T>)) {
        self.ln1.visit_mut(&format!("{prefix}.ln1"), f);
        self.self_attn.visit_mut(&format!("{prefix}.self_attn"), f);
        self.ln2.visit_mut(&format!("{prefix}.ln2"), f);
        self.cross_attn.visit_mut(&format!("{prefix}.cross_attn"), f);
        if let Some(aa) = self.aa.as_mut() {
            aa.visit_mut(&format!("{prefix}.aa"), f);
        }
        self.ln3.visit_mut(&format!("{prefix}.ln3"), f);
        self.ff.visit_mut(&format!("{prefix}.ff"), f);
    }
}

/// All trainable parameters. The output projection is tied to
/// `token_embedding` and has no tensor of its own.
#[derive(Debug, Clone)]
pub struct ModelWeights<T: Scalar> {
    pub token_embedding: Tensor<T>,
    pub position_embedding: Tensor<T>,
    pub encoder: Vec<EncoderLayerWeights<T>>,
    pub encoder_norm: LayerNormWeights<T>,
    pub decoder: Vec<DecoderLayerWeights<T>>,
    pub decoder_norm: LayerNormWeights<T>,
}

impl<T: Scalar> ModelWeights<T> {
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        ModelWeights {
            token_embedding: randn(rng, &[cfg.vocab, cfg.d], INIT_STD),
            position_embedding: randn(rng, &[cfg.max_positions, cfg.d], INIT_STD),
            encoder: (0..cfg.layers)
                .map(|_| EncoderLayerWeights::init(cfg, rng))
                .collect(),
            encoder_norm: LayerNormWeights::init(cfg.d),
            decoder: (0..cfg.layers)
                .map(|_| DecoderLayerWeights::init(cfg, rng))
                .collect(),
            decoder_norm: LayerNormWeights::init(cfg.d),
        }
    }

    /// Visits every parameter as `(name, tensor)` in a fixed order.
    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut Tensor<T>)) {
        f("token_embedding".to_string(), &mut self.token_embedding);
        f("position_embedding".to_string(), &mut self.position_embedding);
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            layer.visit_mut(&format!("encoder.{i}"), f);
        }
        self.encoder_norm.visit_mut("encoder_norm", f);
        for (i, layer) in self.decoder.iter_mut().enumerate() {
            layer.visit_mut(&format!("decoder.{i}"), f);
        }
        self.decoder_norm.visit_mut("decoder_norm", f);
    }

    /// Read-only traversal in the same order as `visit_mut`.
    pub fn visit(&self, f: &mut impl FnMut(&str, &Tensor<T>)) {
        // Cloning the struct clones only Arc handles, so traversing a
        // throwaway copy mutably visits the same underlying tensors.
        let mut copy = self.clone();
        copy.visit_mut(&mut |name, t| f(&name, t));
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    /// Replaces parameters positionally (visit order); shapes must match.
    pub fn assign_from(&mut self, tensors: &[Tensor<T>]) -> Result<()> {
        let mut idx = 0usize;
        let mut error: Option<Error> = None;
        self.visit_mut(&mut |name, slot| {
            if error.is_some() {
                return;
            }
            match tensors.get(idx) {
                Some(t) if t.shape() == slot.shape() => *slot = t.clone(),
                Some(t) => {
                    error = Some(Error::ShapeMismatch {
                        op: "assign_from",
                        lhs: slot.shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    })
                }
                None => error = Some(Error::Contract(format!("missing tensor for {name}"))),
            }
            idx += 1;
        });
        if let Some(e) = error {
            return Err(e);
        }
        if idx != tensors.len() {
            return Err(Error::Contract(format!(
                "expected {idx} tensors, got {}",
                tensors.len()
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.is_finite());
        ok
    }
}
