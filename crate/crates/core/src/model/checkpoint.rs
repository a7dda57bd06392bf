//! Checkpoint = safetensors weight file + JSON sidecar (`<name>.json`).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::SegmentationModel;
use crate::error::{Error, Result};

/// Prefix for non-model tensors (optimizer state) stored in the weight file.
pub const EXTRA_PREFIX: &str = "optimizer.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub epoch: usize,
    pub best_val_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub model_config: ModelConfig,
    pub created_at: String,
    pub git_or_version: String,
    pub trainable_parameter_count: usize,
    pub training_state: TrainingState,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

fn checkpoint_err(path: &Path, reason: impl ToString) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Writes weights (plus any `extra` tensors, which must use
/// [`EXTRA_PREFIX`]) and the sidecar.
pub fn save_checkpoint(
    model: &SegmentationModel,
    path: &Path,
    state: TrainingState,
    extra: &HashMap<String, Tensor>,
) -> Result<CheckpointSidecar> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut tensors = model.store.tensors();
    for (k, v) in extra {
        if !k.starts_with(EXTRA_PREFIX) {
            return Err(checkpoint_err(path, format!("extra tensor {k} lacks the {EXTRA_PREFIX} prefix")));
        }
        tensors.insert(k.clone(), v.clone());
    }
    candle_core::safetensors::save(&tensors, path)?;
    let sidecar = CheckpointSidecar {
        model_config: model.config.clone(),
        created_at: chrono::Utc::now().to_rfc3339(),
        git_or_version: env!("CARGO_PKG_VERSION").to_string(),
        trainable_parameter_count: model.count_parameters(),
        training_state: state,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(sidecar)
}

pub fn read_sidecar(path: &Path) -> Result<CheckpointSidecar> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| checkpoint_err(&side, e))?;
    serde_json::from_str(&text).map_err(|e| checkpoint_err(&side, e))
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub model: SegmentationModel,
    pub sidecar: CheckpointSidecar,
    /// Tensors stored under [`EXTRA_PREFIX`].
    pub extra: HashMap<String, Tensor>,
}

/// Rebuilds the model from the sidecar config and restores every weight and
/// running statistic.
pub fn load_checkpoint(path: &Path, dtype: DType) -> Result<LoadedCheckpoint> {
    let sidecar = read_sidecar(path)?;
    let mut config = sidecar.model_config.clone();
    // The checkpoint already carries the backbone weights.
    config.encoder_a.pretrained = false;
    config.encoder_b.pretrained = false;
    let mut model = SegmentationModel::build(&config, dtype, 0)?;
    model.config = sidecar.model_config.clone();
    let tensors = candle_core::safetensors::load(path, model.store.device()).map_err(|e| checkpoint_err(path, e))?;
    model.store.load_from(&tensors, "", "")?;
    let extra = tensors
        .into_iter()
        .filter(|(k, _)| k.starts_with(EXTRA_PREFIX))
        .collect();
    Ok(LoadedCheckpoint { model, sidecar, extra })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_has_fixed_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::tiny(0.125).with_input_size(32, 32);
        let model = SegmentationModel::build(&cfg, DType::F32, 3).unwrap();
        let path = dir.path().join("best.ckpt");
        save_checkpoint(
            &model,
            &path,
            TrainingState {
                epoch: 4,
                best_val_dice: 0.5,
            },
            &HashMap::new(),
        )
        .unwrap();
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("best.json")).unwrap()).unwrap();
        let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["created_at", "git_or_version", "model_config", "trainable_parameter_count", "training_state"]
        );
        assert_eq!(json["training_state"]["epoch"], 4);
        assert_eq!(json["trainable_parameter_count"], model.count_parameters());

        let loaded = load_checkpoint(&path, DType::F32).unwrap();
        assert_eq!(loaded.sidecar.training_state.epoch, 4);
        assert_eq!(loaded.model.config, cfg);
    }

    #[test]
    fn missing_sidecar_is_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(&dir.path().join("nope.ckpt"), DType::F32),
            Err(Error::Checkpoint { .. })
        ));
    }
}
