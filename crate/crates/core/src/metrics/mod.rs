//! Dice loss, pixel confusion metrics and the throughput benchmark.

mod bench;
mod confusion;
mod loss;

pub use bench::{fps_benchmark, time_iterations, BenchProtocol, BenchReport, Statistic};
pub use confusion::{
    aggregate_metrics, confusion, confusion_batch, format_sig, markdown_table, metrics_from_counts,
    metrics_from_counts_with, read_metrics_csv, write_markdown_table, write_metrics_csv, ConfusionCounts,
    MetricsReport, BOTH_EMPTY_SCORE, DEFAULT_THRESHOLD, TABLE_COLUMNS,
};
pub use loss::{dice_loss, DiceAggregation, DiceLossConfig};
