use std::fmt::Write as _;
use std::io::Write as _;
use std::ops::{Add, AddAssign};
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Score given to dice, IoU, recall and precision when both prediction and
/// target are empty.
pub const BOTH_EMPTY_SCORE: f64 = 1.0;

/// Pixel-level confusion counts. Component-wise addition makes this a
/// commutative monoid, so frames can be tallied in any order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Binarizes `pred` at `>= threshold` and tallies against a binary `target`.
pub fn confusion<P: Copy + Into<f64>>(pred: &[P], target: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels, target {}",
            pred.len(),
            target.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(target) {
        let p = p.into() >= threshold;
        match (p, g) {
            (true, 1) => c.tp += 1,
            (true, 0) => c.fp += 1,
            (false, 1) => c.fn_ += 1,
            (false, 0) => c.tn += 1,
            _ => return Err(Error::NonBinaryTarget),
        }
    }
    Ok(c)
}

/// Per-frame counts for a `B×…` probability batch against a binary batch of
/// the same shape.
pub fn confusion_batch(probs: &Tensor, target: &Tensor, threshold: f64) -> Result<Vec<ConfusionCounts>> {
    if probs.dims() != target.dims() || probs.rank() == 0 {
        return Err(Error::Shape(format!(
            "probs {:?} and target {:?} differ",
            probs.dims(),
            target.dims()
        )));
    }
    let p = probs.flatten_from(1)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let g = target.flatten_from(1)?.to_dtype(DType::U8)?.to_vec2::<u8>()?;
    p.iter().zip(&g).map(|(p, g)| confusion(p, g, threshold)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice: f64,
    pub miou: f64,
    pub recall: f64,
    pub precision: f64,
    pub f2: f64,
    pub accuracy: f64,
    pub fps: Option<f64>,
    pub n_frames: usize,
}

fn ratio(num: u64, den: u64, both_empty: bool, empty_score: f64) -> f64 {
    if both_empty {
        empty_score
    } else if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics for one frame (or one pooled set of counts).
pub fn metrics_from_counts(counts: ConfusionCounts) -> MetricsReport {
    metrics_from_counts_with(counts, BOTH_EMPTY_SCORE)
}

pub fn metrics_from_counts_with(c: ConfusionCounts, both_empty_score: f64) -> MetricsReport {
    let empty = c.tp == 0 && c.fp == 0 && c.fn_ == 0;
    let dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, empty, both_empty_score);
    // Same value as tp/(tp+fp+fn); written via dice so the two stay consistent.
    let miou = dice / (2.0 - dice);
    let recall = ratio(c.tp, c.tp + c.fn_, empty, both_empty_score);
    let precision = ratio(c.tp, c.tp + c.fp, empty, both_empty_score);
    let f2 = if precision + recall > 0.0 {
        5.0 * precision * recall / (4.0 * precision + recall)
    } else {
        0.0
    };
    let accuracy = if c.total() == 0 {
        1.0
    } else {
        (c.tp + c.tn) as f64 / c.total() as f64
    };
    MetricsReport {
        dice,
        miou,
        recall,
        precision,
        f2,
        accuracy,
        fps: None,
        n_frames: 1,
    }
}

/// Unweighted per-frame mean. `fps` is the mean of the frames that have one.
pub fn aggregate_metrics(per_frame: &[MetricsReport]) -> Result<MetricsReport> {
    if per_frame.is_empty() {
        return Err(Error::EmptyList);
    }
    let n = per_frame.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| per_frame.iter().map(f).sum::<f64>() / n;
    let fps: Vec<f64> = per_frame.iter().filter_map(|m| m.fps).collect();
    Ok(MetricsReport {
        dice: mean(|m| m.dice),
        miou: mean(|m| m.miou),
        recall: mean(|m| m.recall),
        precision: mean(|m| m.precision),
        f2: mean(|m| m.f2),
        accuracy: mean(|m| m.accuracy),
        fps: (!fps.is_empty()).then(|| fps.iter().sum::<f64>() / fps.len() as f64),
        n_frames: per_frame.len(),
    })
}

/// Formats with 17 significant digits in plain decimal notation, enough to
/// round-trip any `f64`.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0.0000000000000000".into() } else { "null".into() };
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (16 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

pub const TABLE_COLUMNS: [&str; 8] = ["method", "dice", "miou", "recall", "precision", "f2", "accuracy", "fps"];

impl MetricsReport {
    fn values(&self) -> [Option<f64>; 7] {
        [
            Some(self.dice),
            Some(self.miou),
            Some(self.recall),
            Some(self.precision),
            Some(self.f2),
            Some(self.accuracy),
            self.fps,
        ]
    }

    /// JSON with every float at 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut s = String::from("{\n");
        for (name, v) in TABLE_COLUMNS[1..].iter().zip(self.values()) {
            let v = v.map_or("null".to_string(), format_sig);
            let _ = writeln!(s, "  \"{name}\": {v},");
        }
        let _ = write!(s, "  \"n_frames\": {}\n}}\n", self.n_frames);
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// One-line summary for terminals.
    pub fn summary_line(&self) -> String {
        let mut s = format!(
            "dice={:.4} miou={:.4} recall={:.4} precision={:.4} f2={:.4} accuracy={:.4}",
            self.dice, self.miou, self.recall, self.precision, self.f2, self.accuracy
        );
        if let Some(fps) = self.fps {
            let _ = write!(s, " fps={fps:.2}");
        }
        let _ = write!(s, " n_frames={}", self.n_frames);
        s
    }
}

/// Metrics table in the column order of [`TABLE_COLUMNS`].
pub fn write_metrics_csv(path: &Path, rows: &[(String, MetricsReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TABLE_COLUMNS)?;
    for (method, m) in rows {
        let mut rec = vec![method.clone()];
        rec.extend(m.values().iter().map(|v| v.map_or(String::new(), format_sig)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_metrics_csv`]. `n_frames` is not stored
/// in the table and comes back as 0.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, MetricsReport)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<Option<f64>> {
            let f = rec.get(i).unwrap_or("");
            if f.is_empty() {
                return Ok(None);
            }
            f.parse()
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("bad number {f:?} in {}", path.display())))
        };
        let req = |i: usize| num(i).map(|v| v.unwrap_or(f64::NAN));
        rows.push((
            rec.get(0).unwrap_or("").to_string(),
            MetricsReport {
                dice: req(1)?,
                miou: req(2)?,
                recall: req(3)?,
                precision: req(4)?,
                f2: req(5)?,
                accuracy: req(6)?,
                fps: num(7)?,
                n_frames: 0,
            },
        ));
    }
    Ok(rows)
}

/// Markdown table with the best value in each column in bold. Higher is
/// better for every column.
pub fn markdown_table(rows: &[(String, MetricsReport)]) -> String {
    let best: Vec<Option<f64>> = (0..7)
        .map(|i| {
            rows.iter()
                .filter_map(|(_, m)| m.values()[i])
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        })
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", TABLE_COLUMNS.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(TABLE_COLUMNS.len()));
    for (method, m) in rows {
        let cells: Vec<String> = m
            .values()
            .iter()
            .zip(&best)
            .enumerate()
            .map(|(i, (v, b))| match v {
                None => "-".to_string(),
                Some(v) => {
                    let text = if i == 6 { format!("{v:.2}") } else { format!("{v:.4}") };
                    if Some(*v) == *b {
                        format!("**{text}**")
                    } else {
                        text
                    }
                }
            })
            .collect();
        let _ = writeln!(out, "| {method} | {} |", cells.join(" | "));
    }
    out
}

pub fn write_markdown_table(path: &Path, rows: &[(String, MetricsReport)]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(markdown_table(rows).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_edges() {
        let ones = [1u8; 16];
        assert_eq!(confusion(&[1.0f64; 16], &ones, 0.5).unwrap(), ConfusionCounts::new(16, 0, 0, 0));
        assert_eq!(confusion(&[0.49f64; 16], &ones, 0.5).unwrap(), ConfusionCounts::new(0, 0, 16, 0));
        assert_eq!(confusion(&[0.5f32; 2], &[0, 1], 0.5).unwrap(), ConfusionCounts::new(1, 1, 0, 0));
        assert!(confusion(&[0.5f32; 2], &[0], 0.5).is_err());
        assert!(matches!(confusion(&[0.5f32], &[2], 0.5), Err(Error::NonBinaryTarget)));
    }

    #[test]
    fn metric_examples() {
        let m = metrics_from_counts(ConfusionCounts::new(16, 0, 0, 0));
        assert_eq!((m.dice, m.miou, m.recall, m.precision, m.f2, m.accuracy), (1., 1., 1., 1., 1., 1.));
        let m = metrics_from_counts(ConfusionCounts::new(2, 2, 0, 0));
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
        assert!((m.f2 - 2.5 / 3.0).abs() < 1e-15);
        let m = metrics_from_counts(ConfusionCounts::new(0, 0, 0, 16));
        assert_eq!((m.dice, m.miou, m.accuracy), (1., 1., 1.));
        // exactly one side empty
        let m = metrics_from_counts(ConfusionCounts::new(0, 0, 5, 11));
        assert_eq!((m.dice, m.miou, m.recall, m.precision, m.f2), (0., 0., 0., 0., 0.));
        let m = metrics_from_counts(ConfusionCounts::new(0, 5, 0, 11));
        assert_eq!((m.dice, m.recall, m.precision), (0., 0., 0.));
    }

    #[test]
    fn aggregation() {
        let mut a = metrics_from_counts(ConfusionCounts::new(4, 1, 1, 10));
        let mut b = a;
        a.dice = 0.8;
        b.dice = 0.6;
        let m = aggregate_metrics(&[a, b]).unwrap();
        assert!((m.dice - 0.7).abs() < 1e-15);
        assert_eq!(m.n_frames, 2);
        assert_eq!(aggregate_metrics(&[a]).unwrap(), a);
        assert!(matches!(aggregate_metrics(&[]), Err(Error::EmptyList)));
    }

    #[test]
    fn json_has_ten_significant_digits() {
        let mut m = metrics_from_counts(ConfusionCounts::new(1, 2, 0, 0));
        m.fps = Some(101.36);
        let j = m.to_json();
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        assert_eq!(v["n_frames"], 1);
        assert!(j.contains("\"precision\": 0.33333333333333331,"), "{j}");
        assert!(j.contains("\"fps\": 101.360000000000"), "{j}");
        assert_eq!(MetricsReport::from_json(&j).unwrap().precision, m.precision);
        let none = metrics_from_counts(ConfusionCounts::new(1, 0, 0, 0)).to_json();
        assert!(none.contains("\"fps\": null"));
    }

    #[test]
    fn csv_round_trip_and_markdown() {
        let dir = tempfile::tempdir().unwrap();
        let a = metrics_from_counts(ConfusionCounts::new(3, 1, 1, 5));
        let mut b = metrics_from_counts(ConfusionCounts::new(5, 0, 0, 5));
        b.fps = Some(12.5);
        let rows = vec![("a".to_string(), a), ("b".to_string(), b)];
        let p = dir.path().join("t.csv");
        write_metrics_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("method,dice,miou,recall,precision,f2,accuracy,fps\n"));
        let back = read_metrics_csv(&p).unwrap();
        assert_eq!(back[0].1.dice, a.dice);
        assert_eq!(back[0].1.fps, None);
        let md = markdown_table(&rows);
        assert!(md.contains("| b | **1.0000** |"), "{md}");
        assert!(md.contains("**12.50**"));
    }
}
