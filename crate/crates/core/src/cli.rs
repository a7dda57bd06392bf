//! `lapseg <prepare|train|evaluate|predict|bench|compare>`.
//!
//! Exit codes: 0 on success, 2 for usage errors and violated
//! preconditions, 1 for failures while running.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::DType;
use clap::{Args, Parser, Subcommand};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    read_image, scan_dataset, split_manifest, AugmentationConfig, ImageTensor, Interpolation, Layout, Manifest,
    MaskTensor, SampleSet, DEFAULT_CACHE_LIMIT_BYTES,
};
use crate::error::{Error, Result};
use crate::metrics::{
    fps_benchmark, write_markdown_table, write_metrics_csv, BenchProtocol, BenchReport, MetricsReport, Statistic,
};
use crate::model::{
    default_decoder, images_to_batch, load_checkpoint, ModelConfig, SegmentationModel, DEFAULT_SE_REDUCTION,
};
use crate::training::{
    seed_everything, train, validate_with, LrSchedule, OptimizerKind, TrainConfig, TrainOptions, DEFAULT_DEVICE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// File name of the resolved configuration inside a run directory.
pub const RESOLVED_CONFIG: &str = "config.json";
/// Tint and opacity of `--overlay` images.
pub const OVERLAY_COLOR: [u8; 3] = [0, 255, 0];
pub const OVERLAY_ALPHA: f32 = 0.5;

#[derive(Debug, Parser)]
#[command(name = "lapseg", version, about = "Binary instrument segmentation for laparoscopy frames")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Index a dataset and write train/val/test manifests.
    Prepare(PrepareArgs),
    /// Train a model and write logs and checkpoints to a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest.
    Evaluate(EvaluateArgs),
    /// Write {0,255} mask PNGs (and optional overlays) for images.
    Predict(PredictArgs),
    /// Measure inference throughput.
    Bench(BenchArgs),
    /// Evaluate and benchmark several checkpoints into one table.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub root: PathBuf,
    /// `paired-dirs` (images/ + masks/) or `manifest-csv`.
    #[arg(long, default_value = "paired-dirs")]
    pub layout: Layout,
    /// Comma-separated train,val,test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
    pub ratios: (f64, f64, f64),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelPreset {
    /// Both real backbones at full width.
    Full,
    /// Two tiny reference backbones.
    Tiny,
}

/// Model flags shared by `train` and `bench`.
#[derive(Debug, Args, Default)]
pub struct ModelFlags {
    #[arg(long, value_enum)]
    pub model: Option<ModelPreset>,
    #[arg(long)]
    pub width_multiplier: Option<f64>,
    /// `WIDTHxHEIGHT`, both multiples of 32.
    #[arg(long, value_parser = parse_size)]
    pub input_size: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub lr_schedule: Option<LrSchedule>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub num_workers: Option<usize>,
    /// Also score the training set after each epoch.
    #[arg(long)]
    pub eval_train: bool,
    /// Disable all augmentation.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, env = "LAPSEG_DEVICE")]
    pub device: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Run configuration the checkpoint is expected to match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Row label in the CSV; defaults to the checkpoint's file stem.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, env = "LAPSEG_DEVICE", default_value = DEFAULT_DEVICE)]
    pub device: String,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `<name>_overlay.png` with the mask tinted over the frame.
    #[arg(long)]
    pub overlay: bool,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, env = "LAPSEG_DEVICE", default_value = DEFAULT_DEVICE)]
    pub device: String,
}

#[derive(Debug, Args)]
pub struct BenchFlags {
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup_iters: Option<usize>,
    #[arg(long)]
    pub timed_iters: Option<usize>,
    /// `WIDTHxHEIGHT`; defaults to the model's input size.
    #[arg(long, value_parser = parse_size)]
    pub bench_size: Option<(usize, usize)>,
    #[arg(long, value_parser = parse_statistic)]
    pub statistic: Option<Statistic>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub protocol: BenchFlags,
    /// Append the report to this CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, env = "LAPSEG_DEVICE", default_value = DEFAULT_DEVICE)]
    pub device: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for `comparison.csv` and `comparison.md`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub protocol: BenchFlags,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, env = "LAPSEG_DEVICE", default_value = DEFAULT_DEVICE)]
    pub device: String,
}

fn parse_ratios(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected three comma-separated ratios, got {s:?}")),
    }
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let w = w.trim().parse().map_err(|e| format!("width {w:?}: {e}"))?;
    let h = h.trim().parse().map_err(|e| format!("height {h:?}: {e}"))?;
    Ok((w, h))
}

fn parse_statistic(s: &str) -> std::result::Result<Statistic, String> {
    match s {
        "median" => Ok(Statistic::Median),
        "mean" => Ok(Statistic::Mean),
        _ => Err(format!("unknown statistic {s:?} (median, mean)")),
    }
}

/// Everything a training run needs. Read from JSON; any field may be left
/// out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augmentation: AugmentationConfig,
    pub bench: BenchProtocol,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_manifest: None,
            val_manifest: None,
            model: ModelConfig::full_size(),
            train: TrainConfig::default(),
            augmentation: AugmentationConfig::default(),
            bench: BenchProtocol::default(),
        }
    }
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Applies model flags on top of the current model config.
    pub fn apply_model_flags(&mut self, flags: &ModelFlags) {
        let (w, h) = flags.input_size.unwrap_or(self.model.input_size);
        let multiplier = flags.width_multiplier.unwrap_or(self.model.width_multiplier);
        match flags.model {
            Some(ModelPreset::Full) => self.model = ModelConfig::full_size(),
            Some(ModelPreset::Tiny) => self.model = ModelConfig::tiny(multiplier),
            None => {
                if flags.width_multiplier.is_some() {
                    self.model.width_multiplier = multiplier;
                    self.model.decoder_blocks = default_decoder(multiplier, DEFAULT_SE_REDUCTION);
                }
            }
        }
        self.model.input_size = (w, h);
    }

    /// Applies `train` flags. Flags win over file values.
    pub fn apply_train_flags(&mut self, args: &TrainArgs) {
        self.apply_model_flags(&args.model);
        if let Some(p) = &args.train_manifest {
            self.train_manifest = Some(p.clone());
        }
        if let Some(p) = &args.val_manifest {
            self.val_manifest = Some(p.clone());
        }
        let t = &mut self.train;
        macro_rules! set {
            ($field:ident, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    t.$field = v;
                }
            };
        }
        set!(epochs, args.epochs);
        set!(batch_size, args.batch_size);
        set!(learning_rate, args.lr);
        set!(optimizer, args.optimizer);
        set!(momentum, args.momentum);
        set!(weight_decay, args.weight_decay);
        set!(lr_schedule, args.lr_schedule);
        set!(seed, args.seed);
        set!(num_workers, args.num_workers);
        set!(device, args.device);
        if args.max_steps.is_some() {
            t.max_steps = args.max_steps;
        }
        if args.eval_train {
            t.eval_train = true;
        }
        if args.no_augment {
            self.augmentation = AugmentationConfig::disabled();
        }
    }
}

fn check_device(device: &str) -> Result<()> {
    TrainConfig {
        device: device.to_string(),
        ..TrainConfig::default()
    }
    .validate()
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_precondition() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Prepare(a) => cmd_prepare(&a).map(|_| EXIT_OK),
        Command::Train(a) => cmd_train(&a).map(|_| EXIT_OK),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| EXIT_OK),
        Command::Predict(a) => cmd_predict(&a).map(|failed| if failed == 0 { EXIT_OK } else { EXIT_FAILURE }),
        Command::Bench(a) => cmd_bench(&a).map(|_| EXIT_OK),
        Command::Compare(a) => {
            cmd_compare(&a).map(|(_, failed)| if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}

/// Split sizes as printed by `prepare`.
pub fn split_line(train: usize, val: usize, test: usize) -> String {
    format!("train={train} val={val} test={test}")
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<(Manifest, Manifest, Manifest)> {
    let root = fs::canonicalize(&args.root).map_err(|_| Error::EmptyDataset(args.root.clone()))?;
    let manifest = scan_dataset(&root, args.layout)?;
    let (train, val, test) = split_manifest(&manifest, args.ratios, args.seed)?;
    fs::create_dir_all(&args.out)?;
    train.write_csv(&args.out.join("train.csv"))?;
    val.write_csv(&args.out.join("val.csv"))?;
    test.write_csv(&args.out.join("test.csv"))?;
    println!("{}", split_line(train.len(), val.len(), test.len()));
    Ok((train, val, test))
}

fn open_manifest(path: &Path, size: (usize, usize)) -> Result<SampleSet> {
    let manifest = Manifest::read_csv(path)?;
    if manifest.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    SampleSet::open(manifest.records, size, DEFAULT_CACHE_LIMIT_BYTES)
}

pub fn cmd_train(args: &TrainArgs) -> Result<crate::training::TrainOutcome> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_train_flags(args);
    let train_path = cfg.train_manifest.clone().ok_or_else(|| usage("--train-manifest is required"))?;
    let val_path = cfg.val_manifest.clone().ok_or_else(|| usage("--val-manifest is required"))?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    cfg.augmentation.validate()?;

    fs::create_dir_all(&args.run_dir)?;
    cfg.write(&args.run_dir.join(RESOLVED_CONFIG))?;

    let size = cfg.model.input_size;
    let train_set = open_manifest(&train_path, size)?;
    let val_set = open_manifest(&val_path, size)?;
    let seeds = seed_everything(cfg.train.seed);
    let mut model = SegmentationModel::build(&cfg.model, DType::F32, seeds.init)?;
    let options = TrainOptions {
        run_dir: Some(args.run_dir.clone()),
        resume_from: args.resume.clone(),
    };
    let outcome = train(&mut model, &train_set, &val_set, &cfg.train, &cfg.augmentation, &options)?;
    if let Some(last) = outcome.log.records.last() {
        let mut line = format!(
            "epochs={} steps={} final_loss={:.5} val_dice={:.4}",
            outcome.log.records.len(),
            outcome.log.total_steps(),
            last.train_loss,
            last.val_dice
        );
        if let Some(d) = last.train_dice {
            line.push_str(&format!(" train_dice={d:.4}"));
        }
        println!("{line}");
    }
    if let Some(best) = &outcome.best {
        println!(
            "best epoch={} val_dice={:.4} checkpoint={}",
            best.epoch,
            best.val_dice,
            best.path.display()
        );
    }
    Ok(outcome)
}

fn method_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn evaluate_checkpoint(checkpoint: &Path, manifest: &Path, threshold: f64) -> Result<(SegmentationModel, MetricsReport)> {
    let loaded = load_checkpoint(checkpoint, DType::F32)?;
    let data = open_manifest(manifest, loaded.model.config.input_size)?;
    let report = validate_with(&loaded.model, &data, threshold)?;
    Ok((loaded.model, report))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricsReport> {
    check_device(&args.device)?;
    let (model, report) = evaluate_checkpoint(&args.checkpoint, &args.manifest, args.threshold)?;
    if let Some(p) = &args.config {
        let expected = RunConfig::read(p)?.model;
        if expected.hash() != model.config.hash() {
            warn!(
                "config hash mismatch: checkpoint {} was built from a different model config than {}",
                args.checkpoint.display(),
                p.display()
            );
            eprintln!("warning: config hash mismatch between {} and {}", args.checkpoint.display(), p.display());
        }
    }
    if let Some(p) = &args.out_json {
        report.write_json(p)?;
    }
    if let Some(p) = &args.out_csv {
        let method = args.method.clone().unwrap_or_else(|| method_name(&args.checkpoint));
        write_metrics_csv(p, &[(method, report)])?;
    }
    println!("{}", report.summary_line());
    Ok(report)
}

fn image_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyDataset(input.to_path_buf()));
    }
    Ok(files)
}

/// Thresholded prediction for one frame at its native resolution: the model
/// runs at its input size and the mask is upsampled with nearest-neighbour.
pub fn predict_mask(model: &SegmentationModel, image: &ImageTensor, threshold: f64) -> Result<MaskTensor> {
    let (w, h) = model.config.input_size;
    let resized = image.resize(h, w, Interpolation::Bilinear);
    let probs = model.forward(&images_to_batch(&[&resized], model.dtype())?)?;
    let values = probs.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let mask = MaskTensor::new(values.iter().map(|&p| u8::from(p >= threshold)).collect(), h, w)?;
    Ok(mask.resize(image.height, image.width))
}

/// Blends `color` over mask pixels at `alpha`.
pub fn overlay(image: &ImageTensor, mask: &MaskTensor) -> image::RgbImage {
    let mut out = image.to_rgb8();
    for (px, &m) in out.pixels_mut().zip(&mask.data) {
        if m > 0 {
            for (c, tint) in px.0.iter_mut().zip(OVERLAY_COLOR) {
                *c = ((1.0 - OVERLAY_ALPHA) * *c as f32 + OVERLAY_ALPHA * tint as f32).round() as u8;
            }
        }
    }
    out
}

/// Returns the number of inputs that failed.
pub fn cmd_predict(args: &PredictArgs) -> Result<usize> {
    check_device(&args.device)?;
    let model = load_checkpoint(&args.checkpoint, DType::F32)?.model;
    let files = image_files(&args.input)?;
    fs::create_dir_all(&args.out)?;
    let mut failed = 0;
    for file in &files {
        let stem = method_name(file);
        let result = read_image(file).and_then(|image| {
            let mask = predict_mask(&model, &image, args.threshold)?;
            mask.to_luma8().save(args.out.join(format!("{stem}.png")))?;
            if args.overlay {
                overlay(&image, &mask).save(args.out.join(format!("{stem}_overlay.png")))?;
            }
            Ok(())
        });
        if let Err(e) = result {
            eprintln!("error: {}: {e}", file.display());
            failed += 1;
        }
    }
    println!("predicted={} failed={failed} out={}", files.len() - failed, args.out.display());
    Ok(failed)
}

fn resolve_protocol(flags: &BenchFlags, model: &ModelConfig) -> Result<BenchProtocol> {
    let d = BenchProtocol::default();
    let p = BenchProtocol {
        batch_size: flags.batch_size.unwrap_or(d.batch_size),
        warmup_iters: flags.warmup_iters.unwrap_or(d.warmup_iters),
        timed_iters: flags.timed_iters.unwrap_or(d.timed_iters),
        input_size: flags.bench_size.unwrap_or(model.input_size),
        statistic: flags.statistic.unwrap_or(d.statistic),
        seed: flags.seed.unwrap_or(d.seed),
    };
    p.validate()?;
    Ok(p)
}

const BENCH_CSV_HEADER: [&str; 9] = [
    "checkpoint",
    "fps",
    "median_ms",
    "mean_ms",
    "stddev_ms",
    "batch_size",
    "timed_iters",
    "width",
    "height",
];

fn append_bench_csv(path: &Path, checkpoint: &Path, r: &BenchReport) -> Result<()> {
    let new = !path.exists();
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if new {
        w.write_record(BENCH_CSV_HEADER)?;
    }
    w.write_record([
        checkpoint.display().to_string(),
        r.fps.to_string(),
        r.median_ms.to_string(),
        r.mean_ms.to_string(),
        r.stddev_ms.to_string(),
        r.batch_size.to_string(),
        r.timed_iters.to_string(),
        r.input_size.0.to_string(),
        r.input_size.1.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport> {
    check_device(&args.device)?;
    // Reject a bad protocol before paying for the checkpoint load.
    resolve_protocol(&args.protocol, &ModelConfig::tiny(0.125))?;
    let model = load_checkpoint(&args.checkpoint, DType::F32)?.model;
    let protocol = resolve_protocol(&args.protocol, &model.config)?;
    let report = fps_benchmark(&model, &protocol)?;
    println!("{}", report.summary_line());
    if let Some(p) = &args.csv {
        append_bench_csv(p, &args.checkpoint, &report)?;
    }
    Ok(report)
}

/// Writes `comparison.csv` and `comparison.md`. Returns the rows and the
/// number of checkpoints that failed.
pub fn cmd_compare(args: &CompareArgs) -> Result<(Vec<(String, MetricsReport)>, usize)> {
    check_device(&args.device)?;
    resolve_protocol(&args.protocol, &ModelConfig::tiny(0.125))?;
    let mut rows = Vec::new();
    let mut failed = 0;
    for ckpt in &args.checkpoints {
        let result = evaluate_checkpoint(ckpt, &args.manifest, args.threshold).and_then(|(model, mut report)| {
            let protocol = resolve_protocol(&args.protocol, &model.config)?;
            report.fps = Some(fps_benchmark(&model, &protocol)?.fps);
            Ok(report)
        });
        match result {
            Ok(report) => {
                let mut name = method_name(ckpt);
                if rows.iter().any(|(n, _): &(String, MetricsReport)| *n == name) {
                    name = ckpt.display().to_string();
                }
                println!("{name}: {}", report.summary_line());
                rows.push((name, report));
            }
            Err(e) => {
                eprintln!("error: {}: {e}", ckpt.display());
                failed += 1;
            }
        }
    }
    fs::create_dir_all(&args.out)?;
    write_metrics_csv(&args.out.join("comparison.csv"), &rows)?;
    write_markdown_table(&args.out.join("comparison.md"), &rows)?;
    let _ = std::io::stdout().flush();
    Ok((rows, failed))
}
