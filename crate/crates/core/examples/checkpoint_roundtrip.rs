//! Saves a model with its JSON sidecar, loads it back and checks the outputs
//! are bit-identical.
//!
//! ```text
//! cargo run --example checkpoint_roundtrip
//! ```

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor};
use lapseg::model::{load_checkpoint, save_checkpoint, sidecar_path, ModelConfig, SegmentationModel, TrainingState};

fn main() -> lapseg::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ckpt");
    let model = SegmentationModel::build(&ModelConfig::tiny(0.25).with_input_size(64, 32), DType::F32, 11)?;
    let state = TrainingState {
        epoch: 3,
        best_val_dice: 0.5,
    };
    let sidecar = save_checkpoint(&model, &path, state, &HashMap::new())?;
    println!(
        "saved {} ({} parameters) with sidecar {}",
        path.display(),
        sidecar.trainable_parameter_count,
        sidecar_path(&path).display()
    );

    let loaded = load_checkpoint(&path, DType::F32)?;
    println!("restored epoch {} best dice {}", loaded.sidecar.training_state.epoch, loaded.sidecar.training_state.best_val_dice);

    let x = Tensor::rand(0f32, 1f32, (1, 3, 32, 64), &Device::Cpu)?;
    let a: Vec<f32> = model.forward(&x)?.flatten_all()?.to_vec1()?;
    let b: Vec<f32> = loaded.model.forward(&x)?.flatten_all()?.to_vec1()?;
    assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    println!("{} outputs identical after reload", a.len());
    Ok(())
}
