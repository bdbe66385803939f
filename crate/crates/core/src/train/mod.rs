//! Training: optimizer, schedule, seeding, checkpointing, and the loop.

pub mod adam;
pub mod checkpoint;
pub mod rng;
pub mod schedule;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{forward_loss, ModelConfig, ModelWeights};
use crate::scalar::Scalar;
use crate::text::{make_batch, TokenizedExample, Vocabulary};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, TrainState};
pub use rng::RngBundle;
pub use schedule::linear_lr;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "loss.csv";

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    /// Validate every this many steps (0 = never).
    pub val_every: u64,
    /// Checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
    /// Insert the separator token between answer and passage in
    /// answer-prompted inputs.
    pub ap_sep: bool,
    /// Stop after this many total steps while keeping the full schedule, so
    /// a later resume continues exactly where the run left off.
    pub stop_after: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            warmup: 0,
            steps: 2000,
            batch_size: 8,
            seed: 42,
            clip_norm: Some(1.0),
            val_every: 0,
            checkpoint_every: 0,
            ap_sep: true,
            stop_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    /// 1-based step count after the update.
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub weights: ModelWeights<T>,
    pub final_loss: Option<f64>,
    pub log: Vec<LossRow>,
    pub checkpoint: Option<PathBuf>,
}

/// Mean per-token loss over `examples` with dropout disabled.
pub fn eval_loss<T: Scalar>(
    examples: &[TokenizedExample],
    weights: &ModelWeights<T>,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    batch_size: usize,
    ap_sep: bool,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let mut total = 0.0f64;
    let mut tokens = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch = make_batch(chunk, &cfg.conditioning, vocab, ap_sep);
        let count = batch.label_mask.iter().filter(|&&f| f != 0).count();
        let loss = forward_loss(&batch, weights, cfg, None)?;
        total += loss.item().as_f64() * count as f64;
        tokens += count;
    }
    Ok(total / tokens as f64)
}

fn write_loss_csv(path: &Path, log: &[LossRow], with_val: bool) -> Result<()> {
    let mut out = String::from(if with_val {
        "step,lr,train_loss,val_loss\n"
    } else {
        "step,lr,train_loss\n"
    });
    for row in log {
        out.push_str(&format!("{},{},{}", row.step, row.lr, row.train_loss));
        if with_val {
            out.push(',');
            if let Some(v) = row.val_loss {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.to_path_buf(), e))
}

/// Runs (or resumes) training. `out_dir`, when given, receives
/// `checkpoint.bin` and `loss.csv`; a final checkpoint is always written
/// there, even for a zero-step run.
pub fn train<T: Scalar>(
    model_cfg: &ModelConfig,
    tcfg: &TrainConfig,
    train_set: &[TokenizedExample],
    val_set: &[TokenizedExample],
    vocab: &Vocabulary,
    out_dir: Option<&Path>,
    resume: Option<TrainState<T>>,
) -> Result<TrainOutcome<T>> {
    model_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if tcfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }

    let seed = resume.as_ref().map_or(tcfg.seed, |s| s.seed);
    if resume.is_some() && seed != tcfg.seed {
        log::warn!("resuming with checkpoint seed {seed}, ignoring configured seed {}", tcfg.seed);
    }
    let bundle = RngBundle::new(seed);
    let start_step = resume.as_ref().map_or(0, |s| s.step);
    let mut weights = match &resume {
        Some(state) => state.weights.clone(),
        None => ModelWeights::init(model_cfg, &mut bundle.init()),
    };
    let mut optimizer = Adam::new(AdamConfig {
        clip_norm: tcfg.clip_norm,
        ..AdamConfig::default()
    });
    if let Some(state) = &resume {
        optimizer.set_step_count(state.step);
        for (name, (m, v)) in &state.moments {
            optimizer.set_moments(name, m.clone(), v.clone());
        }
    }

    let n = train_set.len();
    let batches_per_epoch = n.div_ceil(tcfg.batch_size);
    let mut epoch_cache: Option<(u64, Vec<usize>)> = None;
    let mut log_rows: Vec<LossRow> = Vec::new();
    let mut final_loss = None;
    let ckpt_path = out_dir.map(|d| d.join(CHECKPOINT_FILE));

    let end = tcfg.stop_after.map_or(tcfg.steps, |s| s.min(tcfg.steps));
    for step in start_step..end {
        let epoch = step / batches_per_epoch as u64;
        if epoch_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            epoch_cache = Some((epoch, bundle.epoch_order(epoch, n)));
        }
        let order = &epoch_cache.as_ref().unwrap().1;
        let b = (step % batches_per_epoch as u64) as usize;
        let lo = b * tcfg.batch_size;
        let hi = (lo + tcfg.batch_size).min(n);
        let selected: Vec<TokenizedExample> =
            order[lo..hi].iter().map(|&i| train_set[i].clone()).collect();
        let batch = make_batch(&selected, &model_cfg.conditioning, vocab, tcfg.ap_sep);

        let lr = linear_lr(step, tcfg.warmup, tcfg.steps, tcfg.lr);
        let mut dropout_rng = bundle.dropout(step);
        let rng = (model_cfg.dropout > 0.0).then_some(&mut dropout_rng);
        let loss = forward_loss(&batch, &weights, model_cfg, rng)?;
        let train_loss = loss.item().as_f64();
        if !train_loss.is_finite() {
            return Err(Error::NumericAbort(format!(
                "training loss became non-finite at step {} (the last saved checkpoint is retained)",
                step + 1
            )));
        }
        loss.backward()?;
        optimizer.step(&mut weights, lr)?;
        final_loss = Some(train_loss);

        let val_loss = if tcfg.val_every > 0 && !val_set.is_empty() && (step + 1) % tcfg.val_every == 0
        {
            Some(eval_loss(val_set, &weights, model_cfg, vocab, tcfg.batch_size, tcfg.ap_sep)?)
        } else {
            None
        };
        log_rows.push(LossRow {
            step: step + 1,
            lr,
            train_loss,
            val_loss,
        });

        if let Some(path) = &ckpt_path {
            if tcfg.checkpoint_every > 0 && (step + 1) % tcfg.checkpoint_every == 0 {
                save_checkpoint(path, model_cfg, seed, step + 1, &weights, Some(&optimizer))?;
            }
        }
    }

    if let Some(path) = &ckpt_path {
        save_checkpoint(path, model_cfg, seed, end.max(start_step), &weights, Some(&optimizer))?;
    }
    if let Some(dir) = out_dir {
        write_loss_csv(&dir.join(LOSS_LOG_FILE), &log_rows, tcfg.val_every > 0)?;
    }

    Ok(TrainOutcome {
        weights,
        final_loss,
        log: log_rows,
        checkpoint: ckpt_path,
    })
}
