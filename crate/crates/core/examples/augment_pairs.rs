//! Paired augmentation: the same sampled transforms hit the image and its
//! mask, and the mask stays binary.
//!
//! ```text
//! cargo run --example augment_pairs [OUT_DIR]
//! ```

use lapseg::dataset::{augment, plan_augmentation, synthetic_pair, AugmentationConfig};

fn main() -> lapseg::Result<()> {
    let (image, mask) = synthetic_pair(3, 96, 160);
    let config = AugmentationConfig {
        seed: 7,
        ..AugmentationConfig::default()
    };
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir)?;
    }

    println!("input foreground {:.3}", mask.foreground_fraction());
    for epoch in 0..4 {
        let plan = plan_augmentation(&config, image.height, image.width, 0, epoch)?;
        let (img, msk) = augment(&image, &mask, &config, 0, epoch)?;
        println!(
            "epoch {epoch}: foreground {:.3} binary={} ops={plan:?}",
            msk.foreground_fraction(),
            msk.is_binary()
        );
        if let Some(dir) = &out {
            img.to_rgb8().save(dir.join(format!("epoch{epoch}_image.png")))?;
            msk.to_luma8().save(dir.join(format!("epoch{epoch}_mask.png")))?;
        }
    }
    // Same inputs, same seed, same result.
    assert_eq!(augment(&image, &mask, &config, 0, 2)?, augment(&image, &mask, &config, 0, 2)?);
    Ok(())
}
