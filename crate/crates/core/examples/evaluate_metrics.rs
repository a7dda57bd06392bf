//! Frame metrics from confusion counts, pooled over frames, and rendered as
//! the comparison table.
//!
//! ```text
//! cargo run --example evaluate_metrics
//! ```

use lapseg::metrics::{aggregate_metrics, confusion, markdown_table, metrics_from_counts, ConfusionCounts};

fn main() -> lapseg::Result<()> {
    let target = [1u8, 1, 1, 0, 0, 0, 0, 1];
    let frames: [[f64; 8]; 3] = [
        [0.9, 0.8, 0.7, 0.1, 0.2, 0.1, 0.3, 0.6],
        [0.9, 0.4, 0.7, 0.6, 0.2, 0.1, 0.3, 0.2],
        [0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
    ];
    let mut per_frame = Vec::new();
    let mut pooled = ConfusionCounts::default();
    for (i, probs) in frames.iter().enumerate() {
        let counts = confusion(probs, &target, 0.5)?;
        let m = metrics_from_counts(counts);
        println!("frame {i}: {counts:?} -> {}", m.summary_line());
        pooled += counts;
        per_frame.push(m);
    }
    let mean = aggregate_metrics(&per_frame)?;
    let global = metrics_from_counts(pooled);
    println!("\nper-frame mean: {}", mean.summary_line());
    println!("pooled counts:  {}\n", global.summary_line());
    print!("{}", markdown_table(&[("per_frame_mean".into(), mean), ("pooled".into(), global)]));
    println!("\n{}", mean.to_json());
    Ok(())
}
