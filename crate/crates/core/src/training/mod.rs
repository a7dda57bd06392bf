//! Seeded training loop, optimizers, validation and the epoch log.

mod batch;
mod config;
mod optim;
mod trainer;

pub use batch::assemble_batch;
pub use config::{seed_everything, LrSchedule, OptimizerKind, Seeds, TrainConfig, DEFAULT_DEVICE};
pub use optim::Optimizer;
pub use trainer::{
    train, validate, validate_with, CheckpointRecord, EpochRecord, TrainOptions, TrainOutcome, TrainingLog,
    BEST_CHECKPOINT, CHECKPOINT_DIR, EVAL_BATCH, LOG_FILE,
};
