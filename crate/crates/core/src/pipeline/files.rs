//! On-disk layout of a trained stage: weights, optimizer state, resolved
//! config and loss log side by side.

use std::path::{Path, PathBuf};

use super::{Stage, TrainConfig};
use crate::autodiff::{load_weights_into, ModelParams};
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageFiles {
    pub weights: PathBuf,
    pub state: PathBuf,
    pub config: PathBuf,
    pub loss: PathBuf,
}

impl StageFiles {
    /// `stage{n}.punw`, `stage{n}.puns`, `stage{n}.json`, `stage{n}_loss.csv`.
    pub fn in_dir(dir: impl AsRef<Path>, stage: Stage) -> Self {
        let dir = dir.as_ref();
        let n = u8::from(stage);
        StageFiles {
            weights: dir.join(format!("stage{n}.punw")),
            state: dir.join(format!("stage{n}.puns")),
            config: dir.join(format!("stage{n}.json")),
            loss: dir.join(format!("stage{n}_loss.csv")),
        }
    }
}

/// The config that sits next to a weights file.
pub fn config_path_for(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

pub fn save_train_config(cfg: &TrainConfig, path: &Path) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(cfg)?.as_bytes())
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: TrainConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Weights plus the configuration they were trained with.
pub fn load_stage_model(weights: &Path) -> Result<(TrainConfig, ModelParams<f32>)> {
    let cfg = load_train_config(&config_path_for(weights))?;
    let mut params = cfg.model.init_params(0)?;
    load_weights_into(&mut params, weights)?;
    Ok((cfg, params))
}
