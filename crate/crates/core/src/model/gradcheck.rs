//! Finite-difference gradient checks for the composite model blocks, run in
//! 64-bit precision. Complements the per-op suite in `tensor::gradcheck`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{multi_head_attention, padding_mask};
use super::config::{ConditioningConfig, ModelConfig};
use super::cp::cp_transform;
use super::decoder::{aa_block, decoder_layer};
use super::encoder::encoder_layer;
use super::loss::forward_loss;
use super::weights::{
    AaBlockWeights, AttentionWeights, DecoderLayerWeights, EncoderLayerWeights,
    FeedForwardWeights, LayerNormWeights, ModelWeights,
};
use crate::tensor::gradcheck::{grad_check, rand_param, weighted_sum};
use crate::tensor::{GradCheckReport, Tensor, OP_TOLERANCE};
use crate::text::{make_batch, RawExample, TokenizedExample, Vocabulary};

/// Tolerance for the end-to-end model check; longer chains accumulate more
/// truncation error than a single block.
pub const MODEL_TOLERANCE: f64 = 1e-3;

fn ln_from(t: &[Tensor<f64>]) -> LayerNormWeights<f64> {
    LayerNormWeights {
        gain: t[0].clone(),
        bias: t[1].clone(),
    }
}

fn attn_from(t: &[Tensor<f64>]) -> AttentionWeights<f64> {
    AttentionWeights {
        w_q: t[0].clone(),
        b_q: t[1].clone(),
        w_k: t[2].clone(),
        b_k: t[3].clone(),
        w_v: t[4].clone(),
        b_v: t[5].clone(),
        w_o: t[6].clone(),
        b_o: t[7].clone(),
    }
}

fn ff_from(t: &[Tensor<f64>]) -> FeedForwardWeights<f64> {
    FeedForwardWeights {
        w1: t[0].clone(),
        b1: t[1].clone(),
        w2: t[2].clone(),
        b2: t[3].clone(),
    }
}

fn attn_params(rng: &mut ChaCha8Rng, d: usize) -> Vec<Tensor<f64>> {
    let mut out = Vec::new();
    for _ in 0..4 {
        out.push(rand_param(rng, &[d, d]));
        out.push(rand_param(rng, &[d]));
    }
    out
}

fn ln_params(rng: &mut ChaCha8Rng, d: usize) -> Vec<Tensor<f64>> {
    vec![rand_param(rng, &[d]), rand_param(rng, &[d])]
}

fn ff_params(rng: &mut ChaCha8Rng, d: usize, d_ff: usize) -> Vec<Tensor<f64>> {
    vec![
        rand_param(rng, &[d, d_ff]),
        rand_param(rng, &[d_ff]),
        rand_param(rng, &[d_ff, d]),
        rand_param(rng, &[d]),
    ]
}

fn check_multi_head_attention() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x41a1);
    let (b, m, s, d, heads) = (2, 3, 4, 8, 2);
    let mut inputs = vec![rand_param(&mut rng, &[b, m, d]), rand_param(&mut rng, &[b, s, d])];
    inputs.extend(attn_params(&mut rng, d));
    let flags = [1u8, 1, 1, 0, 1, 1, 1, 1];
    grad_check("multi_head_attention", &inputs, OP_TOLERANCE, move |t| {
        let mask = padding_mask::<f64>(&flags, b, s);
        let (out, _) = multi_head_attention(&t[0], &t[1], &attn_from(&t[2..]), heads, Some(&mask))
            .unwrap();
        weighted_sum(&out, 0xa001)
    })
}

fn check_encoder_layer() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x41a2);
    let (b, n, d, d_ff, heads) = (2, 3, 8, 12, 2);
    let mut inputs = vec![rand_param(&mut rng, &[b, n, d])];
    inputs.extend(ln_params(&mut rng, d));
    inputs.extend(attn_params(&mut rng, d));
    inputs.extend(ln_params(&mut rng, d));
    inputs.extend(ff_params(&mut rng, d, d_ff));
    let flags = [1u8, 1, 0, 1, 1, 1];
    grad_check("encoder_layer", &inputs, OP_TOLERANCE, move |t| {
        let lw = EncoderLayerWeights {
            ln1: ln_from(&t[1..]),
            self_attn: attn_from(&t[3..]),
            ln2: ln_from(&t[11..]),
            ff: ff_from(&t[13..]),
        };
        let mask = padding_mask::<f64>(&flags, b, n);
        let out = encoder_layer(&t[0], &lw, heads, Some(&mask), 0.0, None).unwrap();
        weighted_sum(&out, 0xa002)
    })
}

fn check_aa_block() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x41a3);
    let (b, m, d, heads) = (2, 4, 8, 2);
    let mut inputs = vec![rand_param(&mut rng, &[b, m, d]), rand_param(&mut rng, &[b, d])];
    inputs.extend(attn_params(&mut rng, d));
    inputs.extend(ln_params(&mut rng, d));
    grad_check("aa_block", &inputs, OP_TOLERANCE, move |t| {
        let w = AaBlockWeights {
            attn: attn_from(&t[2..]),
            norm: ln_from(&t[10..]),
        };
        let out = aa_block(&t[0], &t[1], &w, heads, 0.0, None).unwrap();
        weighted_sum(&out, 0xa003)
    })
}

fn check_decoder_layer() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x41a4);
    let (b, m, s, d, d_ff, heads) = (1, 3, 4, 8, 12, 2);
    let mut inputs = vec![
        rand_param(&mut rng, &[b, m, d]),
        rand_param(&mut rng, &[b, s, d]),
        rand_param(&mut rng, &[b, d]),
    ];
    inputs.extend(ln_params(&mut rng, d)); // 3..5   ln1
    inputs.extend(attn_params(&mut rng, d)); // 5..13  self
    inputs.extend(ln_params(&mut rng, d)); // 13..15 ln2
    inputs.extend(attn_params(&mut rng, d)); // 15..23 cross
    inputs.extend(attn_params(&mut rng, d)); // 23..31 aa attn
    inputs.extend(ln_params(&mut rng, d)); // 31..33 aa norm
    inputs.extend(ln_params(&mut rng, d)); // 33..35 ln3
    inputs.extend(ff_params(&mut rng, d, d_ff)); // 35..39
    let flags = [1u8, 1, 1, 0];
    grad_check("decoder_layer", &inputs, OP_TOLERANCE, move |t| {
        let lw = DecoderLayerWeights {
            ln1: ln_from(&t[3..]),
            self_attn: attn_from(&t[5..]),
            ln2: ln_from(&t[13..]),
            cross_attn: attn_from(&t[15..]),
            aa: Some(AaBlockWeights {
                attn: attn_from(&t[23..]),
                norm: ln_from(&t[31..]),
            }),
            ln3: ln_from(&t[33..]),
            ff: ff_from(&t[35..]),
        };
        let self_mask = super::attention::causal_mask::<f64>(m);
        let cross_mask = padding_mask::<f64>(&flags, b, s);
        let out = decoder_layer(
            &t[0], &lw, &t[1], &self_mask, &cross_mask, Some(&t[2]), heads, 0.0, None,
        )
        .unwrap();
        weighted_sum(&out, 0xa004)
    })
}

fn check_cp_transform() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x41a5);
    let (b, n, d) = (2, 4, 6);
    let inputs = vec![rand_param(&mut rng, &[b, n, d]), rand_param(&mut rng, &[b, d])];
    let flags = [1u8, 1, 1, 1, 1, 1, 1, 0];
    grad_check("cp_transform", &inputs, OP_TOLERANCE, move |t| {
        let out = cp_transform(&t[0], &t[1], &flags, 3.0).unwrap();
        weighted_sum(&out, 0xa005)
    })
}

/// Configuration and batch for the end-to-end check: 16-dim, 2 layers, all
/// answer mechanisms that touch the network (AA and the product
/// conditioning) enabled so their parameters and paths are covered.
fn full_model_fixture() -> (ModelConfig, Vocabulary, Vec<TokenizedExample>) {
    let passages = [
        ("f1", "mia keeps bees . mia sells honey .", "where ?", "bees", 10),
        ("f2", "leo reads maps . leo walks far .", "what ?", "maps", 10),
    ];
    let corpus: Vec<String> = passages
        .iter()
        .map(|(_, p, q, _, _)| format!("{p} {q}"))
        .collect();
    let vocab = Vocabulary::build(corpus.iter().map(|s| s.as_str()), 100).unwrap();
    let examples: Vec<TokenizedExample> = passages
        .iter()
        .map(|(id, p, q, a, start)| {
            TokenizedExample::from_raw(
                &RawExample {
                    id: (*id).into(),
                    passage: (*p).into(),
                    question: (*q).into(),
                    answer: (*a).into(),
                    answer_start: *start,
                },
                &vocab,
            )
        })
        .collect();
    let cfg = ModelConfig {
        d: 16,
        layers: 2,
        heads: 2,
        d_ff: 32,
        vocab: vocab.size(),
        max_positions: 32,
        dropout: 0.0,
        conditioning: ConditioningConfig {
            ap: true,
            rs: false,
            cp: true,
            aa: true,
            k: 4.0,
        },
    };
    cfg.validate().unwrap();
    (cfg, vocab, examples)
}

fn check_full_model() -> GradCheckReport {
    let (cfg, vocab, examples) = full_model_fixture();
    let batch = make_batch(&examples, &cfg.conditioning, &vocab, true);
    let base = ModelWeights::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0x41a6));
    let inputs: Vec<Tensor<f64>> = base.named_tensors().into_iter().map(|(_, t)| t).collect();
    grad_check("full_model (16d, 2 layers)", &inputs, MODEL_TOLERANCE, move |t| {
        let mut w = base.clone();
        w.assign_from(t).unwrap();
        forward_loss(&batch, &w, &cfg, None).unwrap()
    })
}

/// Gradient checks for each composite block plus the whole network.
pub fn model_suite() -> Vec<GradCheckReport> {
    vec![
        check_multi_head_attention(),
        check_encoder_layer(),
        check_aa_block(),
        check_decoder_layer(),
        check_cp_transform(),
        check_full_model(),
    ]
}
