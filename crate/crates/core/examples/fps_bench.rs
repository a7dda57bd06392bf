//! Inference throughput of the tiny model under the fixed benchmark protocol.
//!
//! ```text
//! cargo run --example fps_bench [WIDTH HEIGHT]
//! ```

use candle_core::DType;
use lapseg::metrics::{fps_benchmark, BenchProtocol, Statistic};
use lapseg::model::{ModelConfig, SegmentationModel};

fn main() -> lapseg::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let size = match args[..] {
        [w, h] => (w, h),
        _ => (128, 64),
    };
    let model = SegmentationModel::build(&ModelConfig::tiny(0.125).with_input_size(size.0, size.1), DType::F32, 0)?;
    for statistic in [Statistic::Median, Statistic::Mean] {
        let protocol = BenchProtocol {
            warmup_iters: 5,
            timed_iters: 30,
            input_size: size,
            statistic,
            ..BenchProtocol::default()
        };
        let report = fps_benchmark(&model, &protocol)?;
        println!("{statistic:?}: {}", report.summary_line());
    }
    Ok(())
}
