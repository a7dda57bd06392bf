//! Writes a small synthetic dataset in the paired-directory layout, indexes
//! it and splits it into train/val/test manifests.
//!
//! ```text
//! cargo run --example prepare_dataset [OUT_DIR]
//! ```

use std::path::PathBuf;

use lapseg::dataset::{scan_dataset, split_manifest, write_synthetic_dataset, Layout, DEFAULT_SPLIT_RATIOS};

fn main() -> lapseg::Result<()> {
    let out = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => std::env::temp_dir().join("lapseg_prepare_example"),
    };
    let root = out.join("data");
    write_synthetic_dataset(&root, 50, 5, (64, 32), 0)?;

    let manifest = scan_dataset(&root, Layout::PairedDirs)?;
    println!("indexed {} pairs under {}", manifest.len(), root.display());

    let (train, val, test) = split_manifest(&manifest, DEFAULT_SPLIT_RATIOS, 42)?;
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        let path = out.join(format!("{name}.csv"));
        part.write_csv(&path)?;
        println!("{name:>5}: {:3} records -> {}", part.len(), path.display());
    }
    let first = &train.records[0];
    println!("first train record: {} (procedure {})", first.frame_id, first.procedure_id);
    Ok(())
}
