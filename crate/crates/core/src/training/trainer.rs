use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::assemble_batch;
use super::config::{seed_everything, LrSchedule, TrainConfig};
use super::optim::Optimizer;
use crate::dataset::{AugmentationConfig, Augmenter, SampleSet};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_metrics, confusion_batch, dice_loss, metrics_from_counts, MetricsReport};
use crate::model::{load_checkpoint, save_checkpoint, Mode, SegmentationModel, TrainingState, EXTRA_PREFIX};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
/// Frames per forward pass during validation.
pub const EVAL_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
    pub val_miou: f64,
    pub learning_rate: f64,
    pub wall_time_seconds: f64,
    /// Optimizer steps taken in this epoch.
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_dice: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for line in BufReader::new(std::fs::File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { records })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for r in &self.records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    fn append(&mut self, path: Option<&Path>, record: EpochRecord) -> Result<()> {
        if let Some(path) = path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
        }
        self.records.push(record);
        Ok(())
    }

    /// Epochs strictly increase and every loss is finite.
    pub fn is_consistent(&self) -> bool {
        self.records.windows(2).all(|w| w[0].epoch < w[1].epoch)
            && self.records.iter().all(|r| r.train_loss.is_finite())
    }

    pub fn total_steps(&self) -> usize {
        self.records.iter().map(|r| r.steps).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub path: PathBuf,
    pub epoch: usize,
    pub val_dice: f64,
    pub model_config_hash: String,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where the log and checkpoints go. Nothing is written when unset.
    pub run_dir: Option<PathBuf>,
    /// Continue from this checkpoint; its epoch counts as done.
    pub resume_from: Option<PathBuf>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    pub best: Option<CheckpointRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub augmenter: Augmenter,
}

#[derive(Debug, Clone, Copy)]
struct LrState {
    lr: f64,
    best: f64,
    wait: usize,
}

impl LrState {
    fn update(&mut self, cfg: &TrainConfig, val_dice: f64) {
        if val_dice > self.best {
            self.best = val_dice;
            self.wait = 0;
        } else if cfg.lr_schedule == LrSchedule::ReduceOnPlateau {
            self.wait += 1;
            if self.wait > cfg.plateau_patience {
                self.lr = (self.lr * cfg.plateau_factor).max(cfg.min_learning_rate);
                self.wait = 0;
                info!("reducing learning rate to {}", self.lr);
            }
        }
    }

    fn to_tensors(self) -> Result<HashMap<String, Tensor>> {
        let v = Tensor::new(&[self.lr, self.best, self.wait as f64], &Device::Cpu)?;
        Ok(HashMap::from([(format!("{EXTRA_PREFIX}schedule"), v)]))
    }

    fn from_tensors(t: &HashMap<String, Tensor>) -> Option<Self> {
        let v = t.get(&format!("{EXTRA_PREFIX}schedule"))?.to_vec1::<f64>().ok()?;
        Some(Self {
            lr: v[0],
            best: v[1],
            wait: v[2] as usize,
        })
    }
}

/// Per-frame metrics of `model` over `data`, averaged. No augmentation.
pub fn validate(model: &SegmentationModel, data: &SampleSet) -> Result<MetricsReport> {
    validate_with(model, data, crate::metrics::DEFAULT_THRESHOLD)
}

pub fn validate_with(model: &SegmentationModel, data: &SampleSet, threshold: f64) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::EmptyList);
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut frames = Vec::with_capacity(data.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, y) = assemble_batch(data, chunk, None, 0, 1, model.dtype())?;
        let probs = model.forward(&x)?;
        for c in confusion_batch(&probs, &y, threshold)? {
            frames.push(metrics_from_counts(c));
        }
    }
    aggregate_metrics(&frames)
}

fn checkpoint_dir(run_dir: &Path) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR)
}

/// Trains `model` in place: shuffled mini-batches, dice loss, one optimizer
/// step per batch, validation after every epoch and a checkpoint whenever
/// validation dice improves.
pub fn train(
    model: &mut SegmentationModel,
    train_set: &SampleSet,
    val_set: &SampleSet,
    config: &TrainConfig,
    augmentation: &AugmentationConfig,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyList);
    }
    let (w, h) = model.config.input_size;
    if train_set.size() != (w, h) || val_set.size() != (w, h) {
        return Err(Error::InvalidConfig(format!(
            "data is {:?} / {:?} but the model expects {w}x{h}",
            train_set.size(),
            val_set.size()
        )));
    }
    let seeds = seed_everything(config.seed);
    let mut aug_cfg = augmentation.clone();
    aug_cfg.seed = seeds.augment;
    aug_cfg.target_size = Some((w, h));
    let augmenter = Augmenter::new(aug_cfg)?;
    let dtype = model.dtype();

    let mut optimizer = Optimizer::new(config);
    let mut lr = LrState {
        lr: config.learning_rate,
        best: f64::NEG_INFINITY,
        wait: 0,
    };
    let mut log = TrainingLog::default();
    let mut best: Option<CheckpointRecord> = None;
    let mut start_epoch = 1;

    let log_path = options.run_dir.as_ref().map(|d| d.join(LOG_FILE));
    if let Some(dir) = &options.run_dir {
        std::fs::create_dir_all(checkpoint_dir(dir))?;
    }

    if let Some(path) = &options.resume_from {
        let loaded = load_checkpoint(path, dtype)?;
        if loaded.model.config != model.config {
            warn!("resuming from a checkpoint whose model config differs from the current one");
        }
        model.store.load_from(&loaded.model.store.tensors(), "", "")?;
        optimizer.load_state(&loaded.extra, dtype)?;
        if let Some(s) = LrState::from_tensors(&loaded.extra) {
            lr = s;
        }
        let state = loaded.sidecar.training_state;
        start_epoch = state.epoch + 1;
        if state.best_val_dice.is_finite() {
            best = Some(CheckpointRecord {
                path: options
                    .run_dir
                    .as_ref()
                    .map(|d| checkpoint_dir(d).join(BEST_CHECKPOINT))
                    .unwrap_or_else(|| path.clone()),
                epoch: state.epoch,
                val_dice: state.best_val_dice,
                model_config_hash: model.config.hash(),
            });
        }
        if let Some(p) = &log_path {
            if p.exists() {
                log = TrainingLog::read_jsonl(p)?;
                log.records.retain(|r| r.epoch <= state.epoch);
                log.write_jsonl(p)?;
            }
        }
        info!("resumed from {} at epoch {}", path.display(), state.epoch);
    } else if let Some(p) = &log_path {
        std::fs::write(p, "")?;
    }

    let mut total_steps = optimizer.steps as usize;
    let mut step_losses = Vec::new();
    for epoch in start_epoch..=config.epochs {
        if config.max_steps.is_some_and(|m| total_steps >= m) {
            break;
        }
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds.epoch_shuffle(epoch)));

        let mut epoch_losses = Vec::new();
        for (batch_index, indices) in order.chunks(config.batch_size).enumerate() {
            if config.max_steps.is_some_and(|m| total_steps >= m) {
                break;
            }
            let (x, y) = assemble_batch(train_set, indices, Some(&augmenter), epoch, config.num_workers, dtype)?;
            let probs = model.forward_mode(&x, Mode::Train)?;
            let loss = dice_loss(&probs, &y, &config.loss)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            let grads = loss.backward()?;
            optimizer.step(&model.store, &grads, lr.lr)?;
            total_steps += 1;
            epoch_losses.push(value);
            step_losses.push(value);
        }

        let val = validate_with(model, val_set, config.threshold)?;
        let train_dice = if config.eval_train {
            Some(validate_with(model, train_set, config.threshold)?.dice)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            train_loss: epoch_losses.iter().sum::<f64>() / epoch_losses.len().max(1) as f64,
            val_dice: val.dice,
            val_miou: val.miou,
            learning_rate: lr.lr,
            wall_time_seconds: started.elapsed().as_secs_f64(),
            steps: epoch_losses.len(),
            train_dice,
        };
        info!(
            "epoch {epoch}: loss={:.5} val_dice={:.4} val_miou={:.4} lr={:e}",
            record.train_loss, record.val_dice, record.val_miou, record.learning_rate
        );
        log.append(log_path.as_deref(), record)?;

        let improved = best.as_ref().is_none_or(|b| val.dice > b.val_dice);
        let best_dice = if improved {
            val.dice
        } else {
            best.as_ref().map_or(val.dice, |b| b.val_dice)
        };
        lr.update(config, val.dice);

        if let Some(dir) = &options.run_dir {
            let mut extra = optimizer.state_tensors()?;
            extra.extend(lr.to_tensors()?);
            let state = TrainingState {
                epoch,
                best_val_dice: best_dice,
            };
            let ckpt_dir = checkpoint_dir(dir);
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                save_checkpoint(model, &ckpt_dir.join(format!("epoch_{epoch}.ckpt")), state, &extra)?;
            }
            if improved {
                let path = ckpt_dir.join(BEST_CHECKPOINT);
                save_checkpoint(model, &path, state, &extra)?;
                best = Some(CheckpointRecord {
                    path,
                    epoch,
                    val_dice: val.dice,
                    model_config_hash: model.config.hash(),
                });
            }
        } else if improved {
            best = Some(CheckpointRecord {
                path: PathBuf::new(),
                epoch,
                val_dice: val.dice,
                model_config_hash: model.config.hash(),
            });
        }
    }

    Ok(TrainOutcome {
        log,
        best,
        step_losses,
        augmenter,
    })
}
