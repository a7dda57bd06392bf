//! Fits the tiny model to eight synthetic frames with SGD and dice loss.
//!
//! ```text
//! cargo run --example train_tiny [STEPS]
//! ```

use candle_core::DType;
use lapseg::dataset::{synthetic_pairs, AugmentationConfig, SampleSet};
use lapseg::model::{ModelConfig, SegmentationModel};
use lapseg::training::{seed_everything, train, validate, OptimizerKind, TrainConfig, TrainOptions};

fn main() -> lapseg::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);

    let data = SampleSet::from_pairs(synthetic_pairs(8, 7, 32, 32))?;
    let config = TrainConfig {
        batch_size: 8,
        optimizer: OptimizerKind::Sgd,
        learning_rate: 1e-2,
        momentum: 0.9,
        epochs: steps,
        max_steps: Some(steps),
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let seeds = seed_everything(config.seed);
    let mut model = SegmentationModel::build(&ModelConfig::tiny(0.5).with_input_size(32, 32), DType::F32, seeds.init)?;
    println!("dice before training: {:.4}", validate(&model, &data)?.dice);

    let outcome = train(&mut model, &data, &data, &config, &AugmentationConfig::disabled(), &TrainOptions::default())?;
    for r in outcome.log.records.iter().step_by((steps / 10).max(1)) {
        println!("epoch {:3}  loss {:.4}  dice {:.4}", r.epoch, r.train_loss, r.val_dice);
    }
    println!("dice after {steps} steps: {:.4}", validate(&model, &data)?.dice);
    Ok(())
}
