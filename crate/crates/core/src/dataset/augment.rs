//! Paired image/mask augmentation.
//!
//! Every geometric op is planned once and then replayed on both the image and
//! the mask, so the two can never drift apart. Randomness comes from a
//! per-sample stream keyed by `(seed, sample_index, epoch)` and a per-op
//! sub-stream, which makes the output independent of loader scheduling and
//! of which other ops are enabled.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{ImageTensor, Interpolation, MaskTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    CenterCrop,
    RandomCrop,
    Scale,
    Hflip,
    Vflip,
    Cutout,
    Grayscale,
}

impl AugmentOp {
    /// Application order.
    pub const ALL: [AugmentOp; 7] = [
        AugmentOp::CenterCrop,
        AugmentOp::RandomCrop,
        AugmentOp::Scale,
        AugmentOp::Hflip,
        AugmentOp::Vflip,
        AugmentOp::Cutout,
        AugmentOp::Grayscale,
    ];

    pub fn is_geometric(self) -> bool {
        !matches!(self, AugmentOp::Grayscale)
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|&o| o == self).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub enabled: BTreeSet<AugmentOp>,
    /// Probability used for any enabled op without an override.
    pub probability: f64,
    pub op_probability: BTreeMap<AugmentOp, f64>,
    pub crop_fraction_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub cutout_size_fraction: f64,
    pub seed: u64,
    /// `(width, height)` of the output; `None` keeps the input size.
    pub target_size: Option<(usize, usize)>,
    /// Resampling used for the image in geometric ops. Masks are always
    /// nearest-neighbour; with `Nearest` here the image and mask see the
    /// exact same pixel mapping.
    pub image_interpolation: Interpolation,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            enabled: AugmentOp::ALL.into_iter().collect(),
            probability: 0.5,
            op_probability: BTreeMap::new(),
            crop_fraction_range: (0.7, 1.0),
            scale_range: (0.75, 1.25),
            cutout_size_fraction: 0.25,
            seed: 0,
            target_size: None,
            image_interpolation: Interpolation::Nearest,
        }
    }
}

impl AugmentationConfig {
    /// No op ever fires.
    pub fn disabled() -> Self {
        Self {
            enabled: BTreeSet::new(),
            ..Self::default()
        }
    }

    /// Only `op`, always applied.
    pub fn only(op: AugmentOp) -> Self {
        Self {
            enabled: [op].into_iter().collect(),
            probability: 1.0,
            ..Self::default()
        }
    }

    pub fn probability_of(&self, op: AugmentOp) -> f64 {
        if !self.enabled.contains(&op) {
            return 0.0;
        }
        self.op_probability.get(&op).copied().unwrap_or(self.probability)
    }

    pub fn validate(&self) -> Result<()> {
        let probs = std::iter::once(self.probability).chain(self.op_probability.values().copied());
        for p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("augmentation probability {p} outside [0, 1]")));
            }
        }
        for (name, (lo, hi)) in [("crop_fraction_range", self.crop_fraction_range), ("scale_range", self.scale_range)] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.5) {
                return Err(Error::InvalidConfig(format!(
                    "{name} ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1.5"
                )));
            }
        }
        if !(self.cutout_size_fraction > 0.0 && self.cutout_size_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cutout_size_fraction {} outside (0, 1]",
                self.cutout_size_fraction
            )));
        }
        if let Some((w, h)) = self.target_size {
            if w == 0 || h == 0 {
                return Err(Error::InvalidConfig("augmentation target size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A concrete, already-sampled transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AppliedOp {
    Crop {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    /// Content resized to `height × width` and centred on the unchanged canvas.
    Scale { height: usize, width: usize },
    Hflip,
    Vflip,
    Cutout {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    Grayscale,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one sample in one epoch.
pub fn sample_seed(seed: u64, sample_index: u64, epoch: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ sample_index) ^ epoch.rotate_left(32))
}

fn crop_dims(fraction: f64, height: usize, width: usize) -> Result<(usize, usize)> {
    let ch = ((fraction * height as f64).round() as usize).max(1);
    let cw = ((fraction * width as f64).round() as usize).max(1);
    if ch > height || cw > width {
        return Err(Error::CropLargerThanImage {
            crop: (ch, cw),
            image: (height, width),
        });
    }
    Ok((ch, cw))
}

/// Samples the transforms for one call. Shapes are tracked through the
/// sequence, so crop windows always refer to the current intermediate size.
pub fn plan_augmentation(
    config: &AugmentationConfig,
    height: usize,
    width: usize,
    sample_index: u64,
    epoch: u64,
) -> Result<Vec<AppliedOp>> {
    config.validate()?;
    let base = sample_seed(config.seed, sample_index, epoch);
    let (mut h, mut w) = (height, width);
    let mut plan = Vec::new();
    for op in AugmentOp::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(base ^ op.index() as u64));
        let fire: f64 = rng.random();
        if fire >= config.probability_of(op) {
            continue;
        }
        let (lo, hi) = config.crop_fraction_range;
        let applied = match op {
            AugmentOp::CenterCrop => {
                let (ch, cw) = crop_dims(rng.random_range(lo..=hi), h, w)?;
                AppliedOp::Crop {
                    top: (h - ch) / 2,
                    left: (w - cw) / 2,
                    height: ch,
                    width: cw,
                }
            }
            AugmentOp::RandomCrop => {
                let (ch, cw) = crop_dims(rng.random_range(lo..=hi), h, w)?;
                AppliedOp::Crop {
                    top: rng.random_range(0..=h - ch),
                    left: rng.random_range(0..=w - cw),
                    height: ch,
                    width: cw,
                }
            }
            AugmentOp::Scale => {
                let (slo, shi) = config.scale_range;
                let s: f64 = rng.random_range(slo..=shi);
                AppliedOp::Scale {
                    height: ((s * h as f64).round() as usize).max(1),
                    width: ((s * w as f64).round() as usize).max(1),
                }
            }
            AugmentOp::Hflip => AppliedOp::Hflip,
            AugmentOp::Vflip => AppliedOp::Vflip,
            AugmentOp::Cutout => {
                let f = config.cutout_size_fraction;
                let ch = ((f * h as f64).round() as usize).clamp(1, h);
                let cw = ((f * w as f64).round() as usize).clamp(1, w);
                AppliedOp::Cutout {
                    top: rng.random_range(0..=h - ch),
                    left: rng.random_range(0..=w - cw),
                    height: ch,
                    width: cw,
                }
            }
            AugmentOp::Grayscale => AppliedOp::Grayscale,
        };
        if let AppliedOp::Crop { height, width, .. } = applied {
            h = height;
            w = width;
        }
        plan.push(applied);
    }
    Ok(plan)
}

/// Places `content` centred on an `height × width` canvas of zeros,
/// cropping whatever overhangs.
fn paste_centered<T: Copy + Default>(
    content: &[T],
    ch: usize,
    cw: usize,
    channels: usize,
    height: usize,
    width: usize,
) -> Vec<T> {
    let mut out = vec![T::default(); height * width * channels];
    let off_y = (height as isize - ch as isize) / 2;
    let off_x = (width as isize - cw as isize) / 2;
    for y in 0..height {
        let cy = y as isize - off_y;
        if cy < 0 || cy >= ch as isize {
            continue;
        }
        for x in 0..width {
            let cx = x as isize - off_x;
            if cx < 0 || cx >= cw as isize {
                continue;
            }
            let src = (cy as usize * cw + cx as usize) * channels;
            let dst = (y * width + x) * channels;
            out[dst..dst + channels].copy_from_slice(&content[src..src + channels]);
        }
    }
    out
}

fn flip_rows<T: Copy>(data: &mut [T], height: usize, width: usize, channels: usize, horizontal: bool) {
    let row = width * channels;
    if horizontal {
        for y in 0..height {
            let r = &mut data[y * row..(y + 1) * row];
            for x in 0..width / 2 {
                for c in 0..channels {
                    r.swap(x * channels + c, (width - 1 - x) * channels + c);
                }
            }
        }
    } else {
        for y in 0..height / 2 {
            let (a, b) = data.split_at_mut((height - 1 - y) * row);
            a[y * row..(y + 1) * row].swap_with_slice(&mut b[..row]);
        }
    }
}

pub fn apply_to_image(image: &ImageTensor, op: &AppliedOp, interp: Interpolation) -> ImageTensor {
    let mut out = image.clone();
    match *op {
        AppliedOp::Crop {
            top,
            left,
            height,
            width,
        } => out = image.crop(top, left, height, width),
        AppliedOp::Scale { height, width } => {
            let content = image.resize(height, width, interp);
            out.data = paste_centered(&content.data, height, width, 3, image.height, image.width);
        }
        AppliedOp::Hflip => flip_rows(&mut out.data, out.height, out.width, 3, true),
        AppliedOp::Vflip => flip_rows(&mut out.data, out.height, out.width, 3, false),
        AppliedOp::Cutout {
            top,
            left,
            height,
            width,
        } => {
            for y in top..top + height {
                let start = (y * out.width + left) * 3;
                out.data[start..start + width * 3].fill(0.0);
            }
        }
        AppliedOp::Grayscale => {
            for px in out.data.chunks_exact_mut(3) {
                let l = (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]).clamp(0.0, 1.0);
                px.fill(l);
            }
        }
    }
    out
}

pub fn apply_to_mask(mask: &MaskTensor, op: &AppliedOp) -> MaskTensor {
    let mut out = mask.clone();
    match *op {
        AppliedOp::Crop {
            top,
            left,
            height,
            width,
        } => out = mask.crop(top, left, height, width),
        AppliedOp::Scale { height, width } => {
            let content = mask.resize(height, width);
            out.data = paste_centered(&content.data, height, width, 1, mask.height, mask.width);
        }
        AppliedOp::Hflip => flip_rows(&mut out.data, out.height, out.width, 1, true),
        AppliedOp::Vflip => flip_rows(&mut out.data, out.height, out.width, 1, false),
        AppliedOp::Cutout {
            top,
            left,
            height,
            width,
        } => {
            for y in top..top + height {
                let start = y * out.width + left;
                out.data[start..start + width].fill(0);
            }
        }
        AppliedOp::Grayscale => {}
    }
    out
}

/// Augments a pair. Pure: the result depends only on the inputs,
/// `config.seed`, `sample_index` and `epoch`.
pub fn augment(
    image: &ImageTensor,
    mask: &MaskTensor,
    config: &AugmentationConfig,
    sample_index: u64,
    epoch: u64,
) -> Result<(ImageTensor, MaskTensor)> {
    augment_with_plan(image, mask, config, sample_index, epoch).map(|(i, m, _)| (i, m))
}

fn augment_with_plan(
    image: &ImageTensor,
    mask: &MaskTensor,
    config: &AugmentationConfig,
    sample_index: u64,
    epoch: u64,
) -> Result<(ImageTensor, MaskTensor, Vec<AppliedOp>)> {
    if (image.height, image.width) != (mask.height, mask.width) {
        return Err(Error::Shape(format!(
            "image {}x{} and mask {}x{} differ",
            image.height, image.width, mask.height, mask.width
        )));
    }
    let plan = plan_augmentation(config, image.height, image.width, sample_index, epoch)?;
    let mut img = image.clone();
    let mut msk = mask.clone();
    for op in &plan {
        img = apply_to_image(&img, op, config.image_interpolation);
        msk = apply_to_mask(&msk, op);
    }
    let (tw, th) = config.target_size.unwrap_or((image.width, image.height));
    let img = img.resize(th, tw, config.image_interpolation);
    let msk = msk.resize(th, tw);
    Ok((img, msk, plan))
}

/// Call and per-op counters, used to prove that evaluation passes never
/// touch augmentation.
#[derive(Debug, Default)]
pub struct AugmentStats {
    calls: AtomicU64,
    applied: [AtomicU64; 7],
}

impl AugmentStats {
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn applied(&self, op: AugmentOp) -> u64 {
        self.applied[op.index()].load(Ordering::Relaxed)
    }

    pub fn total_applied(&self) -> u64 {
        self.applied.iter().map(|a| a.load(Ordering::Relaxed)).sum()
    }
}

/// [`augment`] plus bookkeeping.
#[derive(Debug, Default)]
pub struct Augmenter {
    pub config: AugmentationConfig,
    pub stats: AugmentStats,
}

impl Augmenter {
    pub fn new(config: AugmentationConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            stats: AugmentStats::default(),
        })
    }

    pub fn apply(
        &self,
        image: &ImageTensor,
        mask: &MaskTensor,
        sample_index: u64,
        epoch: u64,
    ) -> Result<(ImageTensor, MaskTensor)> {
        let (img, msk, plan) = augment_with_plan(image, mask, &self.config, sample_index, epoch)?;
        self.stats.calls.fetch_add(1, Ordering::Relaxed);
        for op in plan {
            let kind = match op {
                AppliedOp::Crop { .. } => continue,
                AppliedOp::Scale { .. } => AugmentOp::Scale,
                AppliedOp::Hflip => AugmentOp::Hflip,
                AppliedOp::Vflip => AugmentOp::Vflip,
                AppliedOp::Cutout { .. } => AugmentOp::Cutout,
                AppliedOp::Grayscale => AugmentOp::Grayscale,
            };
            self.stats.applied[kind.index()].fetch_add(1, Ordering::Relaxed);
        }
        Ok((img, msk))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize, seed: u64) -> (ImageTensor, MaskTensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * 3).map(|_| rng.random::<f32>()).collect();
        let mask = (0..h * w).map(|_| rng.random_range(0..2u8)).collect();
        (
            ImageTensor::new(data, h, w).unwrap(),
            MaskTensor::new(mask, h, w).unwrap(),
        )
    }

    #[test]
    fn zero_probability_is_identity() {
        let (img, mask) = sample(32, 48, 1);
        let cfg = AugmentationConfig {
            probability: 0.0,
            ..Default::default()
        };
        let (i2, m2) = augment(&img, &mask, &cfg, 5, 2).unwrap();
        assert_eq!(i2, img);
        assert_eq!(m2, mask);
    }

    #[test]
    fn double_hflip_is_identity() {
        let (img, mask) = sample(17, 23, 2);
        let cfg = AugmentationConfig::only(AugmentOp::Hflip);
        let (i1, m1) = augment(&img, &mask, &cfg, 0, 0).unwrap();
        assert_ne!(i1, img);
        let (i2, m2) = augment(&i1, &m1, &cfg, 0, 0).unwrap();
        assert_eq!(i2, img);
        assert_eq!(m2, mask);
    }

    #[test]
    fn vflip_odd_height() {
        let mask = MaskTensor::new(vec![1, 0, 0, 0, 0, 1], 3, 2).unwrap();
        let out = apply_to_mask(&mask, &AppliedOp::Vflip);
        assert_eq!(out.data, vec![0, 1, 0, 0, 1, 0]);
    }

    #[test]
    fn random_crop_half_matches_window_slice() {
        let (img, mask) = sample(256, 512, 3);
        let cfg = AugmentationConfig {
            crop_fraction_range: (0.5, 0.5),
            ..AugmentationConfig::only(AugmentOp::RandomCrop)
        };
        let plan = plan_augmentation(&cfg, 256, 512, 9, 1).unwrap();
        let AppliedOp::Crop {
            top,
            left,
            height,
            width,
        } = plan[0]
        else {
            panic!("expected a crop, got {plan:?}");
        };
        assert_eq!((height, width), (128, 256));
        let cropped = apply_to_mask(&mask, &plan[0]);
        for y in 0..height {
            for x in 0..width {
                assert_eq!(cropped.data[y * width + x], mask.data[(top + y) * 512 + left + x]);
            }
        }
        let cropped_img = apply_to_image(&img, &plan[0], Interpolation::Nearest);
        assert_eq!(cropped_img.pixel(5, 7), img.pixel(top + 5, left + 7));
    }

    #[test]
    fn oversize_crop_is_rejected() {
        let (img, mask) = sample(8, 8, 4);
        let cfg = AugmentationConfig {
            crop_fraction_range: (1.2, 1.3),
            ..AugmentationConfig::only(AugmentOp::CenterCrop)
        };
        assert!(matches!(
            augment(&img, &mask, &cfg, 0, 0),
            Err(Error::CropLargerThanImage { .. })
        ));
    }

    #[test]
    fn grayscale_leaves_mask_alone() {
        let (img, mask) = sample(6, 6, 5);
        let (i2, m2) = augment(&img, &mask, &AugmentationConfig::only(AugmentOp::Grayscale), 0, 0).unwrap();
        assert_eq!(m2, mask);
        for px in i2.data.chunks_exact(3) {
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
        }
    }

    #[test]
    fn cutout_zeroes_both() {
        let img = ImageTensor::new(vec![1.0; 16 * 16 * 3], 16, 16).unwrap();
        let mask = MaskTensor::new(vec![1; 256], 16, 16).unwrap();
        let (i2, m2) = augment(&img, &mask, &AugmentationConfig::only(AugmentOp::Cutout), 3, 0).unwrap();
        let zeros_img = i2.data.chunks_exact(3).filter(|p| p[0] == 0.0).count();
        let zeros_mask = m2.data.iter().filter(|&&v| v == 0).count();
        assert_eq!(zeros_img, 16);
        assert_eq!(zeros_mask, 16);
    }

    #[test]
    fn stream_depends_on_epoch_and_index() {
        let (img, mask) = sample(32, 32, 6);
        let cfg = AugmentationConfig {
            probability: 1.0,
            enabled: [AugmentOp::RandomCrop].into_iter().collect(),
            ..Default::default()
        };
        let a = augment(&img, &mask, &cfg, 1, 0).unwrap();
        let b = augment(&img, &mask, &cfg, 1, 0).unwrap();
        let c = augment(&img, &mask, &cfg, 1, 1).unwrap();
        let d = augment(&img, &mask, &cfg, 2, 0).unwrap();
        assert_eq!(a, b);
        assert!(a != c || a != d);
    }

    #[test]
    fn counters_track_applied_ops() {
        let (img, mask) = sample(16, 16, 7);
        let aug = Augmenter::new(AugmentationConfig::only(AugmentOp::Vflip)).unwrap();
        aug.apply(&img, &mask, 0, 0).unwrap();
        aug.apply(&img, &mask, 1, 0).unwrap();
        assert_eq!(aug.stats.calls(), 2);
        assert_eq!(aug.stats.applied(AugmentOp::Vflip), 2);
        assert_eq!(aug.stats.applied(AugmentOp::Hflip), 0);
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut cfg = AugmentationConfig {
            scale_range: (1.0, 0.5),
            ..AugmentationConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.scale_range = (0.0, 1.0);
        assert!(cfg.validate().is_err());
        cfg.scale_range = (0.8, 1.6);
        assert!(cfg.validate().is_err());
        let cfg = AugmentationConfig {
            probability: 1.1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
