//! Model hyperparameters and answer-conditioning switches.

use crate::error::{Error, Result};

/// Which answer-conditioning mechanisms are active.
///
/// * `ap` — answer prompting: answer tokens prefixed to the encoder input.
/// * `rs` — related sentences: passage reduced to the sentences containing
///   the answer.
/// * `cp` — custom product: encoder outputs reweighted by answer similarity,
///   scaled by `k`.
/// * `aa` — answer attention: an extra decoder block attending to the pooled
///   answer embedding.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConditioningConfig {
    pub ap: bool,
    pub rs: bool,
    pub cp: bool,
    pub aa: bool,
    /// Multiplication constant for the custom product.
    pub k: f64,
}

pub const DEFAULT_CP_K: f64 = 1e2;

impl Default for ConditioningConfig {
    fn default() -> Self {
        ConditioningConfig {
            ap: false,
            rs: false,
            cp: false,
            aa: false,
            k: DEFAULT_CP_K,
        }
    }
}

impl ConditioningConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cp && self.k <= 0.0 {
            return Err(Error::Config(format!(
                "custom product requires k > 0, got {}",
                self.k
            )));
        }
        Ok(())
    }

    /// True when the pooled answer embedding must be computed.
    pub fn needs_answer_embedding(&self) -> bool {
        self.aa || self.cp
    }

    /// Canonical label: active mechanisms in the fixed order AP, RS, CP, AA
    /// joined by "+"; "BASE" when none are active.
    pub fn mode_label(&self) -> String {
        let mut parts = Vec::new();
        if self.ap {
            parts.push("AP");
        }
        if self.rs {
            parts.push("RS");
        }
        if self.cp {
            parts.push("CP");
        }
        if self.aa {
            parts.push("AA");
        }
        if parts.is_empty() {
            "BASE".to_string()
        } else {
            parts.join("+")
        }
    }

    /// Parses a comma-separated mechanism list, e.g. "ap,rs". Empty or
    /// "base" means no conditioning.
    pub fn parse_mode(mode: &str, k: f64) -> Result<Self> {
        let mut cfg = ConditioningConfig { k, ..Self::none() };
        let trimmed = mode.trim();
        if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("base") {
            return Ok(cfg);
        }
        for part in trimmed.split(',') {
            match part.trim().to_ascii_lowercase().as_str() {
                "ap" => cfg.ap = true,
                "rs" => cfg.rs = true,
                "cp" => cfg.cp = true,
                "aa" => cfg.aa = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown conditioning mechanism {other:?} (expected ap, rs, cp, aa)"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The seven evaluated conditioning configurations.
pub fn experiment_matrix(k: f64) -> [ConditioningConfig; 7] {
    let base = ConditioningConfig { k, ..ConditioningConfig::none() };
    [
        ConditioningConfig { aa: true, ..base },
        ConditioningConfig { cp: true, ..base },
        ConditioningConfig { ap: true, ..base },
        ConditioningConfig { rs: true, cp: true, ..base },
        ConditioningConfig { ap: true, rs: true, ..base },
        ConditioningConfig { ap: true, cp: true, ..base },
        ConditioningConfig { ap: true, rs: true, cp: true, ..base },
    ]
}

/// Transformer dimensions and the active conditioning.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Hidden size d.
    pub d: usize,
    /// Encoder and decoder depth.
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward inner size.
    pub d_ff: usize,
    pub vocab: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub conditioning: ConditioningConfig,
}

impl ModelConfig {
    /// Desk-scale profile: trainable on a CPU in minutes.
    pub fn desk(vocab: usize) -> Self {
        ModelConfig {
            d: 128,
            layers: 2,
            heads: 4,
            d_ff: 256,
            vocab,
            max_positions: 512,
            dropout: 0.0,
            conditioning: ConditioningConfig::none(),
        }
    }

    /// Full-scale profile mirroring the published training setup.
    pub fn paper() -> Self {
        ModelConfig {
            d: 768,
            layers: 6,
            heads: 12,
            d_ff: 3072,
            vocab: 50265,
            max_positions: 1024,
            dropout: 0.1,
            conditioning: ConditioningConfig::none(),
        }
    }

    /// Miniature profile for finite-difference verification.
    pub fn toy(vocab: usize) -> Self {
        ModelConfig {
            d: 16,
            layers: 2,
            heads: 2,
            d_ff: 32,
            vocab,
            max_positions: 16,
            dropout: 0.0,
            conditioning: ConditioningConfig::none(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive multiple of heads {}",
                self.d, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be >= 1".into()));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be >= 1".into()));
        }
        if self.vocab < 6 {
            return Err(Error::Config(format!(
                "vocab size {} too small (needs the 5 specials plus content)",
                self.vocab
            )));
        }
        if self.max_positions == 0 {
            return Err(Error::Config("max_positions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        self.conditioning.validate()
    }
}
