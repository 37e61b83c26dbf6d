//! Two-stage training and inference: a full-slice liver network proposes a
//! region of interest, a second network segments liver and lesions inside
//! the zoomed region, and the two results are fused.

mod files;
mod infer;
mod sampling;
mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ClassWeights, SgdConfig};
use crate::error::{Error, Result};
use crate::model::PolyUNetConfig;
use crate::preprocess::AugmentConfig;

pub use files::{config_path_for, load_stage_model, load_train_config, save_train_config, StageFiles};
pub use infer::{fuse, infer_two_stage, InferConfig, StageOutputs};
pub use sampling::{roi_label_plane, roi_stack};
pub use train::{read_loss_csv, train_stage, write_loss_csv, IterRecord, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    /// Liver only, whole slices.
    One,
    /// Liver and lesion inside the region of interest.
    Two,
}

impl TryFrom<u8> for Stage {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            _ => Err(Error::Config(format!("stage must be 1 or 2, got {v}"))),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        match s {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

/// `initial · factor^⌊iter / period⌋`.
///
/// When `1 / factor` is an integer `n` the decay is computed as a division
/// by the exactly representable `n^k`, so `1e-3` at 0.1 per step yields the
/// literals `1e-4`, `1e-5`, `1e-6` bit for bit.
pub fn lr_at(iter: u64, cfg: &TrainConfig) -> f64 {
    let steps = iter / cfg.lr_period.max(1);
    let inv = (1.0 / cfg.lr_factor).round();
    if inv >= 1.0 && (cfg.lr_factor * inv - 1.0).abs() < 1e-12 {
        let steps = i32::try_from(steps).unwrap_or(i32::MAX);
        cfg.lr / inv.powi(steps)
    } else {
        cfg.lr * cfg.lr_factor.powf(steps as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub model: PolyUNetConfig,
    /// Initial learning rate; zero is allowed and freezes the weights.
    pub lr: f64,
    pub lr_factor: f64,
    pub lr_period: u64,
    pub total_iters: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub class_weights: ClassWeights,
    pub sgd: SgdConfig,
    pub augment: AugmentConfig,
    /// Fraction of samples drawn from slices containing the stage's
    /// foreground class.
    pub foreground_fraction: f64,
    /// Padding around the ground-truth box for stage-2 crops.
    pub roi_pad: [usize; 3],
    /// Maximum random shift of the stage-2 box per axis.
    pub roi_jitter: [usize; 3],
}

impl TrainConfig {
    /// Step schedule of 160000 iterations, decaying by 0.1 every 40000.
    pub fn full_schedule(stage: Stage, model: PolyUNetConfig) -> Self {
        TrainConfig {
            stage,
            model,
            lr: 1e-3,
            lr_factor: 0.1,
            lr_period: 40_000,
            total_iters: 160_000,
            batch_size: 4,
            seed: 0,
            class_weights: ClassWeights::default(),
            sgd: SgdConfig::default(),
            augment: AugmentConfig::default(),
            foreground_fraction: 0.8,
            roi_pad: [16, 16, 4],
            roi_jitter: [4, 4, 1],
        }
    }

    /// Same policy shortened to 2000 iterations with a 500-iteration period.
    pub fn desk(stage: Stage) -> Self {
        TrainConfig {
            total_iters: 2000,
            lr_period: 500,
            roi_pad: [8, 8, 4],
            ..Self::full_schedule(stage, PolyUNetConfig::desk(1))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.class_weights.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::Config("lr factor must lie in (0, 1]".into()));
        }
        if self.lr_period == 0 || self.total_iters == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "period, total iterations and batch size must be positive".into(),
            ));
        }
        if self.lr_period > self.total_iters {
            return Err(Error::Config(format!(
                "decay period {} exceeds total iterations {}",
                self.lr_period, self.total_iters
            )));
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return Err(Error::Config("foreground fraction must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.sgd.momentum) || self.sgd.weight_decay < 0.0 {
            return Err(Error::Config(
                "momentum must lie in [0, 1) and weight decay be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full() -> TrainConfig {
        TrainConfig::full_schedule(Stage::One, PolyUNetConfig::tiny(1))
    }

    #[test]
    fn schedule_breakpoints() {
        let c = full();
        assert_eq!(lr_at(0, &c), 1e-3);
        assert_eq!(lr_at(39_999, &c), 1e-3);
        assert_eq!(lr_at(40_000, &c), 1e-4);
        assert_eq!(lr_at(80_000, &c), 1e-5);
        assert_eq!(lr_at(120_000, &c), 1e-6);
        assert_eq!(lr_at(159_999, &c), 1e-6);
    }

    #[test]
    fn non_reciprocal_factor() {
        let c = TrainConfig {
            lr: 1.0,
            lr_factor: 0.3,
            lr_period: 10,
            ..full()
        };
        assert_eq!(lr_at(9, &c), 1.0);
        assert!((lr_at(25, &c) - 0.09).abs() < 1e-15);
    }

    #[test]
    fn stage_round_trips_through_json() {
        let c = TrainConfig::desk(Stage::Two);
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"stage\":2"));
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<Stage>("3").is_err());
    }

    #[test]
    fn validation() {
        assert!(full().validate().is_ok());
        assert!(TrainConfig {
            lr_period: 200_000,
            ..full()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..full()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { lr: -1.0, ..full() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..full() }.validate().is_ok());
    }

    proptest! {
        #[test]
        fn schedule_is_stepwise_non_increasing(a in 0u64..200_000, b in 0u64..200_000) {
            let c = full();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(lr_at(hi, &c) <= lr_at(lo, &c));
            if lo / c.lr_period == hi / c.lr_period {
                prop_assert_eq!(lr_at(lo, &c), lr_at(hi, &c));
            } else {
                prop_assert!(lr_at(hi, &c) < lr_at(lo, &c));
            }
        }
    }
}
