use std::time::Instant;

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SegmentationModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    #[default]
    Median,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchProtocol {
    pub batch_size: usize,
    pub warmup_iters: usize,
    pub timed_iters: usize,
    /// `(width, height)`.
    pub input_size: (usize, usize),
    pub statistic: Statistic,
    /// Seed of the fixed random input.
    pub seed: u64,
}

impl Default for BenchProtocol {
    fn default() -> Self {
        Self {
            batch_size: 1,
            warmup_iters: 10,
            timed_iters: 100,
            input_size: crate::dataset::DEFAULT_TARGET_SIZE,
            statistic: Statistic::Median,
            seed: 0,
        }
    }
}

impl BenchProtocol {
    pub const MIN_TIMED_ITERS: usize = 10;

    pub fn validate(&self) -> Result<()> {
        if self.timed_iters < Self::MIN_TIMED_ITERS {
            return Err(Error::InvalidConfig(format!(
                "timed_iters {} < {}",
                self.timed_iters,
                Self::MIN_TIMED_ITERS
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("bench batch_size must be >= 1".into()));
        }
        let (w, h) = self.input_size;
        if w == 0 || h == 0 || w % 32 != 0 || h % 32 != 0 {
            return Err(Error::InvalidConfig(format!("bench input {w}x{h} must be multiples of 32")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub fps: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub batch_size: usize,
    pub timed_iters: usize,
    pub input_size: (usize, usize),
}

impl BenchReport {
    /// Summarizes per-iteration wall times in seconds.
    pub fn from_times(times: &[f64], protocol: &BenchProtocol) -> Self {
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        };
        let stat = match protocol.statistic {
            Statistic::Median => median,
            Statistic::Mean => mean,
        };
        Self {
            fps: protocol.batch_size as f64 / stat,
            median_ms: median * 1e3,
            mean_ms: mean * 1e3,
            stddev_ms: var.sqrt() * 1e3,
            batch_size: protocol.batch_size,
            timed_iters: times.len(),
            input_size: protocol.input_size,
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "fps={:.2} median_ms={:.3} mean_ms={:.3} stddev_ms={:.3} batch={} iters={} input={}x{}",
            self.fps,
            self.median_ms,
            self.mean_ms,
            self.stddev_ms,
            self.batch_size,
            self.timed_iters,
            self.input_size.0,
            self.input_size.1
        )
    }
}

/// Times `step` under `protocol`: untimed warmup, then one timestamp pair per
/// timed call.
pub fn time_iterations(protocol: &BenchProtocol, mut step: impl FnMut() -> Result<()>) -> Result<BenchReport> {
    protocol.validate()?;
    for _ in 0..protocol.warmup_iters {
        step()?;
    }
    let mut times = Vec::with_capacity(protocol.timed_iters);
    for _ in 0..protocol.timed_iters {
        // CPU tensors are synchronous: the forward has finished when it returns.
        let start = Instant::now();
        step()?;
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(BenchReport::from_times(&times, protocol))
}

/// Inference throughput of `model` on a fixed random input.
pub fn fps_benchmark(model: &SegmentationModel, protocol: &BenchProtocol) -> Result<BenchReport> {
    protocol.validate()?;
    let (w, h) = protocol.input_size;
    let n = protocol.batch_size * 3 * h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let data: Vec<f32> = (0..n).map(|_| rng.random::<f32>()).collect();
    let x = Tensor::from_vec(data, (protocol.batch_size, 3, h, w), model.store.device())?.to_dtype(model.dtype())?;
    time_iterations(protocol, || {
        model.forward(&x)?;
        Ok(())
    })
}
