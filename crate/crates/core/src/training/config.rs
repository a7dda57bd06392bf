use serde::{Deserialize, Serialize};

use crate::dataset::sample_seed;
use crate::error::{Error, Result};
use crate::metrics::{DiceLossConfig, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(Error::InvalidConfig(format!("unknown optimizer {s:?} (sgd, adam)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply the rate by `plateau_factor` after `plateau_patience` epochs
    /// without a new best validation dice.
    ReduceOnPlateau,
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "reduce_on_plateau" => Ok(Self::ReduceOnPlateau),
            _ => Err(Error::InvalidConfig(format!(
                "unknown lr schedule {s:?} (constant, reduce_on_plateau)"
            ))),
        }
    }
}

pub const DEFAULT_DEVICE: &str = "cpu";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_learning_rate: f64,
    pub device: String,
    pub loss: DiceLossConfig,
    pub threshold: f64,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    /// Threads used to decode and augment a batch.
    pub num_workers: usize,
    /// Also score the un-augmented training set after each epoch.
    pub eval_train: bool,
    /// Write `epoch_<N>.ckpt` every this many epochs; 0 keeps only `best.ckpt`.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 100,
            seed: 0,
            lr_schedule: LrSchedule::Constant,
            plateau_factor: 0.1,
            plateau_patience: 10,
            min_learning_rate: 0.0,
            device: DEFAULT_DEVICE.into(),
            loss: DiceLossConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            max_steps: None,
            num_workers: 1,
            eval_train: false,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau_factor {} outside (0, 1)", self.plateau_factor));
        }
        if self.num_workers == 0 {
            return bad("num_workers must be >= 1".into());
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be >= 1".into());
        }
        if !is_cpu(&self.device) {
            return bad(format!("device {:?} is not available; this build runs on cpu", self.device));
        }
        self.loss.validate()
    }
}

fn is_cpu(device: &str) -> bool {
    matches!(device.trim().to_ascii_lowercase().as_str(), "cpu" | "cpu:0")
}

/// Independent streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
    pub augment: u64,
}

impl Seeds {
    /// Seed for the batch order of `epoch`.
    pub fn epoch_shuffle(&self, epoch: usize) -> u64 {
        sample_seed(self.shuffle, u64::MAX, epoch as u64)
    }
}

/// Derives every random source used by a run from `seed`: weight init,
/// batch order and augmentation. There is no global RNG; callers pass these
/// on (`SegmentationModel::build` takes `init`, training uses the rest).
pub fn seed_everything(seed: u64) -> Seeds {
    Seeds {
        init: sample_seed(seed, 1, 0),
        shuffle: sample_seed(seed, 2, 0),
        augment: sample_seed(seed, 3, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.optimizer, c.epochs), (12, OptimizerKind::Sgd, 100));
        assert_eq!((c.learning_rate, c.momentum, c.weight_decay), (1e-4, 0.9, 0.0));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..Default::default()
            },
            TrainConfig {
                device: "cuda:0".into(),
                ..Default::default()
            },
        ] {
            assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn seeds_are_distinct_streams() {
        let s = seed_everything(5);
        assert_ne!(s.init, s.shuffle);
        assert_ne!(s.shuffle, s.augment);
        assert_eq!(s, seed_everything(5));
        assert_ne!(s.init, seed_everything(6).init);
        assert_ne!(s.epoch_shuffle(1), s.epoch_shuffle(2));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "optimizer": "adam"}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.optimizer, OptimizerKind::Adam);
        assert_eq!(c.batch_size, 12);
    }
}
