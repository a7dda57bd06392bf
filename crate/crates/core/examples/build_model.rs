//! Builds the tiny and full-size networks, prints parameter counts and runs a
//! forward pass.
//!
//! ```text
//! cargo run --example build_model
//! ```

use candle_core::{DType, Device, Tensor};
use lapseg::model::{ModelConfig, SegmentationModel, REFERENCE_PARAMETER_COUNT};

fn main() -> lapseg::Result<()> {
    let tiny = SegmentationModel::build(&ModelConfig::tiny(0.125).with_input_size(160, 96), DType::F32, 0)?;
    println!("tiny (width 0.125): {} trainable parameters", tiny.count_parameters());

    let x = Tensor::rand(0f32, 1f32, (2, 3, 96, 160), &Device::Cpu)?;
    let probs = tiny.forward(&x)?;
    let (lo, hi) = (probs.min_all()?.to_scalar::<f32>()?, probs.max_all()?.to_scalar::<f32>()?);
    println!("forward {:?} -> {:?}, probabilities in [{lo:.6}, {hi:.6}]", x.dims(), probs.dims());

    let full = SegmentationModel::build(&ModelConfig::full_size(), DType::F32, 0)?;
    let n = full.count_parameters();
    println!(
        "full size: {n} trainable parameters ({:+.1}% against {REFERENCE_PARAMETER_COUNT})",
        (n as f64 / REFERENCE_PARAMETER_COUNT as f64 - 1.0) * 100.0
    );
    println!("config hash {}", full.config.hash());
    Ok(())
}
