//! Model configuration, parameters, and the forward graph.

pub mod params;
pub mod routing;
pub mod transformer;

pub use params::ParamSet;
pub use transformer::{
    bind, decode_logits, encode, example_loss, grad_of, sinusoidal_positions, BoundIds, DecodeOut,
};

use crate::{LexError, Result};
use serde::{Deserialize, Serialize};

/// Where the domain-routing layer sits inside each decoder block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrPosition {
    /// After decoder self-attention (the default and strongest placement).
    AfterSan,
    /// After decoder cross-attention.
    AfterCan,
    /// Gate pinned to zero: only the shared path, no gate or domain matrix.
    SharedOnly,
    /// No routing layer at all; a vanilla decoder.
    None,
}

impl DrPosition {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "after_san" => Ok(DrPosition::AfterSan),
            "after_can" => Ok(DrPosition::AfterCan),
            "shared_only" => Ok(DrPosition::SharedOnly),
            "none" => Ok(DrPosition::None),
            other => Err(LexError::Config(format!(
                "unknown dr_position '{other}' (expected after_san | after_can | shared_only | none)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DrPosition::AfterSan => "after_san",
            DrPosition::AfterCan => "after_can",
            DrPosition::SharedOnly => "shared_only",
            DrPosition::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub d_gate_hidden: usize,
    pub dropout_p: f64,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dr_position: DrPosition,
    /// Adds zero-mean Gaussian noise (std 0.1) to the pre-sigmoid gate logit
    /// during training. Off by default; kept as a reproducible ablation.
    pub dr_noise: bool,
    /// false = post-norm LN(z + f(z)); true = pre-norm z + f(LN(z)) with a
    /// final LN after each stack.
    pub pre_norm: bool,
}

impl ModelConfig {
    /// Full-size configuration (not exercised by tests; documents the
    /// intended production scale).
    pub fn paper_scale(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 1536,
            n_heads: 16,
            n_enc_layers: 6,
            n_dec_layers: 6,
            d_ff: 4096,
            d_gate_hidden: 256,
            dropout_p: 0.2,
            max_len: 1024,
            vocab_size,
            dr_position: DrPosition::AfterSan,
            dr_noise: false,
            pre_norm: false,
        }
    }

    /// Desk-scale configuration small enough to train in seconds.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 32,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 64,
            d_gate_hidden: 16,
            dropout_p: 0.1,
            max_len: 160,
            vocab_size,
            dr_position: DrPosition::AfterSan,
            dr_noise: false,
            pre_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(LexError::Config("d_model and n_heads must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(LexError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(LexError::Config(format!(
                "d_model {} must be even for paired sine/cosine positions",
                self.d_model
            )));
        }
        if self.d_gate_hidden < 1 {
            return Err(LexError::Config("d_gate_hidden must be >= 1".into()));
        }
        if self.d_ff == 0 {
            return Err(LexError::Config("d_ff must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(LexError::Config(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if self.max_len < 2 {
            return Err(LexError::Config("max_len must be >= 2".into()));
        }
        if self.vocab_size < 5 {
            return Err(LexError::Config(format!(
                "vocab_size {} cannot cover the special tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::paper_scale(64_000).validate().unwrap();
        ModelConfig::toy(100).validate().unwrap();
    }

    #[test]
    fn paper_scale_preset_matches_published_dimensions() {
        let c = ModelConfig::paper_scale(64_000);
        assert_eq!(c.d_model, 1536);
        assert_eq!(c.n_heads, 16);
        assert_eq!(c.d_ff, 4096);
        assert_eq!(c.d_gate_hidden, 256);
        assert_eq!(c.dropout_p, 0.2);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = ModelConfig::toy(100);
        c.n_heads = 5;
        assert!(matches!(c.validate(), Err(LexError::Config(_))));

        let mut c = ModelConfig::toy(100);
        c.d_gate_hidden = 0;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::toy(100);
        c.dropout_p = 1.0;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::toy(100);
        c.vocab_size = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn dr_position_round_trips_through_strings() {
        for (s, v) in [
            ("after_san", DrPosition::AfterSan),
            ("after_can", DrPosition::AfterCan),
            ("shared_only", DrPosition::SharedOnly),
            ("none", DrPosition::None),
        ] {
            assert_eq!(DrPosition::parse(s).unwrap(), v);
            assert_eq!(v.as_str(), s);
        }
        assert!(matches!(
            DrPosition::parse("after_ffn"),
            Err(LexError::Config(_))
        ));
    }

    #[test]
    fn config_serde_round_trip() {
        let c = ModelConfig::toy(128);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"after_san\""));
        let back: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
