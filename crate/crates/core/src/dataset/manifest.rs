use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["image_path", "mask_path", "procedure_id", "frame_id", "split"];

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub procedure_id: String,
    pub frame_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub root: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// A manifest CSV (the file itself, or `manifest.csv` inside a directory).
    ManifestCsv,
    /// `images/` and `masks/` trees with matching relative names.
    #[default]
    PairedDirs,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manifest_csv" | "manifest-csv" => Ok(Layout::ManifestCsv),
            "paired_dirs" | "paired-dirs" => Ok(Layout::PairedDirs),
            other => Err(Error::InvalidConfig(format!("unknown layout {other:?}"))),
        }
    }
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Reads a manifest CSV. Relative paths are resolved against the
    /// directory holding the CSV.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::InvalidConfig(format!(
                "{}: manifest header must be {}",
                path.display(),
                MANIFEST_HEADER.join(",")
            )));
        }
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row?;
            let resolve = |p: &str| {
                let p = PathBuf::from(p);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            };
            records.push(SampleRecord {
                image_path: resolve(&row[0]),
                mask_path: resolve(&row[1]),
                procedure_id: row[2].to_string(),
                frame_id: row[3].to_string(),
                split: row[4].parse()?,
            });
        }
        Ok(Self {
            records,
            root: base,
            seed: 0,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(MANIFEST_HEADER)?;
        for r in &self.records {
            writer.write_record([
                r.image_path.to_string_lossy().as_ref(),
                r.mask_path.to_string_lossy().as_ref(),
                r.procedure_id.as_str(),
                r.frame_id.as_str(),
                r.split.to_string().as_str(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Indexes a dataset root. Records come back sorted by image path and every
/// pair is checked for existence and matching header dimensions.
pub fn scan_dataset(root: &Path, layout: Layout) -> Result<Manifest> {
    if !root.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset root {} does not exist", root.display()),
        )));
    }
    let mut records = match layout {
        Layout::PairedDirs => scan_paired_dirs(root)?,
        Layout::ManifestCsv => {
            let csv_path = if root.is_dir() {
                root.join("manifest.csv")
            } else {
                root.to_path_buf()
            };
            Manifest::read_csv(&csv_path)?.records
        }
    };
    if records.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    records.sort_by(|a, b| a.image_path.cmp(&b.image_path));

    let mut seen = HashSet::new();
    for r in &records {
        if !seen.insert(r.image_path.clone()) {
            return Err(Error::InvalidConfig(format!(
                "duplicate image path {}",
                r.image_path.display()
            )));
        }
        verify_pair(r)?;
    }
    Ok(Manifest {
        records,
        root: root.to_path_buf(),
        seed: 0,
    })
}

fn verify_pair(r: &SampleRecord) -> Result<()> {
    let dims = |p: &Path| {
        image::image_dimensions(p).map_err(|e| Error::UnreadableImage {
            path: p.to_path_buf(),
            reason: e.to_string(),
        })
    };
    if !r.mask_path.exists() {
        return Err(Error::MissingMask(r.image_path.clone()));
    }
    let image = dims(&r.image_path)?;
    let mask = dims(&r.mask_path)?;
    if image != mask {
        return Err(Error::DimensionMismatch { image, mask });
    }
    Ok(())
}

fn is_image_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn walk_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            walk_files(&path, out)?;
        } else if is_image_file(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Pairs `root/images/<rel>.<ext>` with `root/masks/<rel>.<ext>`; masks may
/// use any supported extension. The first component of `<rel>` (when nested)
/// becomes the procedure id.
fn scan_paired_dirs(root: &Path) -> Result<Vec<SampleRecord>> {
    let image_dir = root.join("images");
    let mask_dir = root.join("masks");
    if !image_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut images = Vec::new();
    walk_files(&image_dir, &mut images)?;
    let mut masks = Vec::new();
    if mask_dir.is_dir() {
        walk_files(&mask_dir, &mut masks)?;
    }
    // Relative path without extension -> mask path.
    let mask_index: BTreeMap<PathBuf, PathBuf> = masks
        .into_iter()
        .filter_map(|m| {
            let rel = m.strip_prefix(&mask_dir).ok()?.with_extension("");
            Some((rel, m))
        })
        .collect();

    images.sort();
    let mut records = Vec::with_capacity(images.len());
    for image_path in images {
        let rel = image_path
            .strip_prefix(&image_dir)
            .expect("walked under image dir")
            .with_extension("");
        let mask_path = mask_index
            .get(&rel)
            .cloned()
            .ok_or_else(|| Error::MissingMask(image_path.clone()))?;
        let components: Vec<String> = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        let procedure_id = if components.len() > 1 {
            components[0].clone()
        } else {
            String::new()
        };
        records.push(SampleRecord {
            image_path,
            mask_path,
            procedure_id,
            frame_id: components.join("/"),
            split: Split::Unassigned,
        });
    }
    Ok(records)
}

/// Sizes `(train, val, test)` for `n` records: val and test are floored,
/// train takes the remainder.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (train, val, test) = ratios;
    let finite = [train, val, test].iter().all(|r| r.is_finite() && *r >= 0.0);
    if !finite || train <= 0.0 || (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios(ratios));
    }
    // The epsilon keeps products such as 0.7 * 10 from landing just under an
    // integer.
    let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let n_val = floor(val);
    let n_test = floor(test);
    Ok((n - n_val - n_test, n_val, n_test))
}

/// Seeded shuffle followed by a floor/remainder cut. The three manifests
/// partition the input.
pub fn split_manifest(
    manifest: &Manifest,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Manifest, Manifest, Manifest)> {
    if manifest.is_empty() {
        return Err(Error::EmptyDataset(manifest.root.clone()));
    }
    let (n_train, n_val, _) = split_sizes(manifest.len(), ratios)?;
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let take = |range: std::ops::Range<usize>, split: Split| Manifest {
        records: order[range]
            .iter()
            .map(|&i| SampleRecord {
                split,
                ..manifest.records[i].clone()
            })
            .collect(),
        root: manifest.root.clone(),
        seed,
    };
    Ok((
        take(0..n_train, Split::Train),
        take(n_train..n_train + n_val, Split::Val),
        take(n_train + n_val..manifest.len(), Split::Test),
    ))
}
