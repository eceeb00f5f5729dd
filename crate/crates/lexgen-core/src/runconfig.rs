//! Run configuration files.
//!
//! A run config is a TOML file selecting a preset (`toy` or
//! `paper_scale`) plus optional per-field overrides. Unknown keys are
//! rejected. Every command that consumes a config writes the fully
//! resolved result next to its outputs, so a run can be reproduced from
//! its artifacts alone.
//!
//! `vocab_size` is deliberately absent from the file: it is derived from
//! the data at train time and appears only in the resolved echo.
//! `grad_clip_norm = 0.0` disables gradient clipping (TOML has no null).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{DrPosition, ModelConfig};
use crate::train::TrainConfig;
use crate::{LexError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Toy,
    PaperScale,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Toy => "toy",
            Preset::PaperScale => "paper_scale",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModelPatch {
    d_model: Option<usize>,
    n_heads: Option<usize>,
    n_enc_layers: Option<usize>,
    n_dec_layers: Option<usize>,
    d_ff: Option<usize>,
    d_gate_hidden: Option<usize>,
    dropout_p: Option<f64>,
    max_len: Option<usize>,
    /// Accepted so a resolved echo parses back; must match the
    /// data-derived value when present.
    vocab_size: Option<usize>,
    dr_position: Option<DrPosition>,
    dr_noise: Option<bool>,
    pre_norm: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainPatch {
    lr: Option<f64>,
    warmup_steps: Option<u64>,
    label_smoothing: Option<f64>,
    dropout: Option<f64>,
    max_tokens_per_batch: Option<usize>,
    max_updates: Option<u64>,
    patience_epochs: Option<u32>,
    seed: Option<u64>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    adam_eps: Option<f64>,
    grad_clip_norm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSettings {
    pub beam_size: usize,
    pub topk: usize,
    pub length_penalty_alpha: f64,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings { beam_size: 5, topk: 3, length_penalty_alpha: 1.0 }
    }
}

impl DecodeSettings {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.topk == 0 {
            return Err(LexError::Config("beam_size and topk must be at least 1".into()));
        }
        if !(self.length_penalty_alpha.is_finite() && self.length_penalty_alpha >= 0.0) {
            return Err(LexError::Config(format!(
                "length_penalty_alpha must be finite and non-negative, got {}",
                self.length_penalty_alpha
            )));
        }
        Ok(())
    }
}

/// File paths a run reads or writes. Commands fill these from flags; in
/// the resolved echo an empty string means "not used by this run".
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub lexicon: String,
    pub splits_dir: String,
    pub checkpoint: String,
    pub report_dir: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    model: ModelPatch,
    train: TrainPatch,
    pub decode: DecodeSettings,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: Preset::Toy,
            model: ModelPatch::default(),
            train: TrainPatch::default(),
            decode: DecodeSettings::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| LexError::Config(format!("bad config: {e}")))?;
        cfg.decode.validate()?;
        cfg.train_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Preset training defaults with the file's overrides applied.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = match self.preset {
            Preset::Toy => TrainConfig::toy(),
            Preset::PaperScale => TrainConfig::default(),
        };
        let p = &self.train;
        if let Some(v) = p.lr {
            t.lr = v;
        }
        if let Some(v) = p.warmup_steps {
            t.warmup_steps = v;
        }
        if let Some(v) = p.label_smoothing {
            t.label_smoothing = v;
        }
        if let Some(v) = p.dropout {
            t.dropout = v;
        }
        if let Some(v) = p.max_tokens_per_batch {
            t.max_tokens_per_batch = v;
        }
        if let Some(v) = p.max_updates {
            t.max_updates = v;
        }
        if let Some(v) = p.patience_epochs {
            t.patience_epochs = v;
        }
        if let Some(v) = p.seed {
            t.seed = v;
        }
        if let Some(v) = p.adam_beta1 {
            t.adam_beta1 = v;
        }
        if let Some(v) = p.adam_beta2 {
            t.adam_beta2 = v;
        }
        if let Some(v) = p.adam_eps {
            t.adam_eps = v;
        }
        if let Some(v) = p.grad_clip_norm {
            t.grad_clip_norm = if v > 0.0 { Some(v) } else { None };
        }
        t.validate()?;
        Ok(t)
    }

    /// Preset model defaults with the file's overrides applied and the
    /// data-derived vocabulary size filled in.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut m = match self.preset {
            Preset::Toy => ModelConfig::toy(vocab_size),
            Preset::PaperScale => ModelConfig::paper_scale(vocab_size),
        };
        let p = &self.model;
        if let Some(v) = p.vocab_size {
            if v != vocab_size {
                return Err(LexError::Config(format!(
                    "vocab_size {v} in the config does not match the data-derived {vocab_size}; \
                     omit the key (it exists only so resolved echoes parse back)"
                )));
            }
        }
        if let Some(v) = p.d_model {
            m.d_model = v;
        }
        if let Some(v) = p.n_heads {
            m.n_heads = v;
        }
        if let Some(v) = p.n_enc_layers {
            m.n_enc_layers = v;
        }
        if let Some(v) = p.n_dec_layers {
            m.n_dec_layers = v;
        }
        if let Some(v) = p.d_ff {
            m.d_ff = v;
        }
        if let Some(v) = p.d_gate_hidden {
            m.d_gate_hidden = v;
        }
        if let Some(v) = p.dropout_p {
            m.dropout_p = v;
        }
        if let Some(v) = p.max_len {
            m.max_len = v;
        }
        if let Some(v) = p.dr_position {
            m.dr_position = v;
        }
        if let Some(v) = p.dr_noise {
            m.dr_noise = v;
        }
        if let Some(v) = p.pre_norm {
            m.pre_norm = v;
        }
        m.validate()?;
        Ok(m)
    }

    /// The fully-resolved view written next to a run's outputs.
    pub fn resolved(&self, vocab_size: usize) -> Result<ResolvedConfig> {
        Ok(ResolvedConfig {
            preset: self.preset,
            model: self.model_config(vocab_size)?,
            train: self.train_config()?,
            decode: self.decode.clone(),
            paths: self.paths.clone(),
        })
    }
}

/// Echo of everything a run actually used; every scalar key is present
/// (clipping disabled serializes as `grad_clip_norm = 0.0`).
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    #[serde(serialize_with = "serialize_train_full")]
    pub train: TrainConfig,
    pub decode: DecodeSettings,
    pub paths: PathsConfig,
}

fn serialize_train_full<S: serde::Serializer>(
    t: &TrainConfig,
    ser: S,
) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Full {
        lr: f64,
        warmup_steps: u64,
        label_smoothing: f64,
        dropout: f64,
        max_tokens_per_batch: usize,
        max_updates: u64,
        patience_epochs: u32,
        seed: u64,
        adam_beta1: f64,
        adam_beta2: f64,
        adam_eps: f64,
        grad_clip_norm: f64,
    }
    Full {
        lr: t.lr,
        warmup_steps: t.warmup_steps,
        label_smoothing: t.label_smoothing,
        dropout: t.dropout,
        max_tokens_per_batch: t.max_tokens_per_batch,
        max_updates: t.max_updates,
        patience_epochs: t.patience_epochs,
        seed: t.seed,
        adam_beta1: t.adam_beta1,
        adam_beta2: t.adam_beta2,
        adam_eps: t.adam_eps,
        grad_clip_norm: t.grad_clip_norm.unwrap_or(0.0),
    }
    .serialize(ser)
}

impl ResolvedConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| LexError::Internal(format!("config echo serialization failed: {e}")))
    }
}
