use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::LmConfig;
use crate::model::Objective;
use crate::mtl::LossForm;

/// Training configuration. Serialized as a flat JSON object; every key is
/// optional and missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Seed of the 8:1:1 split; falls back to `seed`.
    pub split_seed: Option<u64>,
    pub loss_form: LossForm,
    pub min_count: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub sequence_task: bool,
    pub rating_task: bool,
    /// Multiplier on `L_R` before the losses are combined.
    pub rating_loss_scale: f64,
    /// Run the whole loop in `f64` (checkpoints still store `f32`).
    pub double_precision: bool,
    pub max_gen_len: usize,
    pub corpus: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let lm = LmConfig::default();
        Self {
            learning_rate: 0.001,
            batch_size: 128,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            split_seed: None,
            loss_form: LossForm::Positive,
            min_count: 1,
            d_model: lm.d_model,
            n_layers: lm.n_layers,
            n_heads: lm.n_heads,
            d_ff: lm.d_ff,
            max_len: lm.max_len,
            dropout: lm.dropout,
            sequence_task: true,
            rating_task: true,
            rating_loss_scale: 1.0,
            double_precision: false,
            max_gen_len: 20,
            corpus: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_gen_len == 0 {
            return Err(Error::Config("max_gen_len must be >= 1".into()));
        }
        if !self.sequence_task && !self.rating_task {
            return Err(Error::Config("at least one task must be enabled".into()));
        }
        if !(self.rating_loss_scale > 0.0 && self.rating_loss_scale.is_finite()) {
            return Err(Error::Config("rating_loss_scale must be > 0".into()));
        }
        Ok(())
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    pub fn lm_config(&self, vocab_size: usize) -> LmConfig {
        LmConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            vocab_size,
            dropout: self.dropout,
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            form: self.loss_form,
            sequence_task: self.sequence_task,
            rating_task: self.rating_task,
            rating_scale: self.rating_loss_scale,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_protocol() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.patience, 5);
        assert_eq!(c.max_epochs, 50);
        assert_eq!(c.loss_form, LossForm::Positive);
        assert_eq!((c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_len), (64, 2, 2, 256, 24));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = TrainConfig::from_json(r#"{"batch_size": 16, "loss_form": "kendall"}"#).unwrap();
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.loss_form, LossForm::Kendall);
        assert_eq!(c.learning_rate, 0.001);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_json(r#"{"patience": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"learning_rate": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"max_epochs": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }
}
