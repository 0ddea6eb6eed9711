use serde::{Deserialize, Serialize};

use super::optim::OptimizerConfig;
use crate::error::{Error, Result};
use crate::scalar::DType;

/// Floating-point type used for training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// Training hyperparameters. Every field has a default and can be overridden from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    /// Clips whose gradients are averaged into one update.
    pub batch_size: usize,
    /// Seeds network initialisation and the clip order.
    pub seed: u64,
    /// Frame offset between consecutive training windows.
    pub window_stride: usize,
    /// Write a checkpoint every this many steps (0 keeps only the final one).
    pub checkpoint_every: usize,
    pub precision: Precision,
    /// Log the loss every this many steps (0 disables).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::default(),
            steps: 500,
            batch_size: 1,
            seed: 0,
            window_stride: 4,
            checkpoint_every: 100,
            precision: Precision::F32,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.window_stride == 0 {
            return Err(Error::InvalidConfig("window_stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.optimizer.lr(), 1e-4);
        let cfg: TrainConfig =
            serde_json::from_str(r#"{"steps": 3, "precision": "f64", "optimizer": {"type": "sgd", "lr": 0.5}}"#).unwrap();
        assert_eq!(cfg.steps, 3);
        assert_eq!(cfg.precision, Precision::F64);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"stepz": 3}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(TrainConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        let neg = TrainConfig {
            optimizer: OptimizerConfig::Sgd { lr: -0.1, momentum: 0.9 },
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }
}
