//! Predicts a mask for a frame at its native resolution and writes the mask
//! and a tinted overlay.
//!
//! ```text
//! cargo run --example predict_overlay [OUT_DIR]
//! ```

use candle_core::DType;
use lapseg::cli::{overlay, predict_mask};
use lapseg::dataset::synthetic_pair;
use lapseg::model::{ModelConfig, SegmentationModel};

fn main() -> lapseg::Result<()> {
    let out = match std::env::args().nth(1) {
        Some(p) => std::path::PathBuf::from(p),
        None => std::env::temp_dir().join("lapseg_predict_example"),
    };
    std::fs::create_dir_all(&out)?;

    let (frame, _) = synthetic_pair(21, 270, 480);
    let model = SegmentationModel::build(&ModelConfig::tiny(0.125).with_input_size(128, 64), DType::F32, 0)?;
    let mask = predict_mask(&model, &frame, 0.5)?;
    println!(
        "{}x{} frame -> {}x{} mask, foreground {:.3}",
        frame.width,
        frame.height,
        mask.width,
        mask.height,
        mask.foreground_fraction()
    );
    frame.to_rgb8().save(out.join("frame.png"))?;
    mask.to_luma8().save(out.join("mask.png"))?;
    overlay(&frame, &mask).save(out.join("overlay.png"))?;
    println!("wrote frame.png, mask.png, overlay.png to {}", out.display());
    Ok(())
}
