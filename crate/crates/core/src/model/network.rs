use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use log::info;

use super::backbone::{build_backbone, FeatureExtractor, FeaturePyramid};
use super::blocks::DecoderBlock;
use super::config::{EncoderSpec, ModelConfig, BOTTLENECK_STRIDE};
use super::layers::{all_finite, resize_bilinear, sigmoid, Conv2d, ConvOptions, Mode};
use super::params::ParamStore;
use crate::dataset::ImageTensor;
use crate::error::{Error, Result};

/// Trainable parameter count reported for the original full-size network.
pub const REFERENCE_PARAMETER_COUNT: usize = 32_039_819;

/// Channel-wise concatenation of two pyramids, level by level. Maps from
/// `b` are bilinearly resampled onto `a`'s grid when their sizes differ.
pub fn fuse_skips(a: &FeaturePyramid, b: &FeaturePyramid) -> Result<FeaturePyramid> {
    if a.strides() != b.strides() {
        return Err(Error::StrideSetMismatch {
            a: a.strides(),
            b: b.strides(),
        });
    }
    let mut levels = BTreeMap::new();
    for (&stride, ta) in &a.levels {
        let tb = &b.levels[&stride];
        let (_, _, h, w) = ta.dims4()?;
        let tb = resize_bilinear(tb, h, w)?;
        levels.insert(stride, Tensor::cat(&[ta, &tb], 1)?);
    }
    FeaturePyramid::new(levels)
}

/// Dual-encoder segmentation network with a five-stage decoder and a
/// sigmoid head. Inputs and outputs are NCHW.
#[derive(Debug)]
pub struct SegmentationModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder_a: Box<dyn FeatureExtractor>,
    pub encoder_b: Box<dyn FeatureExtractor>,
    pub decoder: Vec<DecoderBlock>,
    pub head: Conv2d,
    skip_strides: Vec<usize>,
}

fn load_pretrained(store: &ParamStore, spec: &EncoderSpec, prefix: &str) -> Result<()> {
    if !spec.pretrained {
        return Ok(());
    }
    let label = format!("{prefix} ({:?})", spec.backbone);
    let path = spec
        .weights_path
        .as_ref()
        .filter(|p| p.exists())
        .ok_or_else(|| Error::WeightsUnavailable(label.clone()))?;
    let tensors = candle_core::safetensors::load(path, store.device())
        .map_err(|e| Error::WeightsUnavailable(format!("{label}: {e}")))?;
    let n = store.load_from(&tensors, &format!("{prefix}."), &format!("{prefix}."))?;
    info!("loaded {n} pretrained tensors into {prefix} from {}", path.display());
    Ok(())
}

impl SegmentationModel {
    /// Builds the network with weights drawn from `seed`.
    pub fn build(config: &ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut a_strides = config.encoder_a.output_strides.clone();
        let mut b_strides = config.encoder_b.output_strides.clone();
        a_strides.sort_unstable();
        b_strides.sort_unstable();
        if a_strides != b_strides {
            return Err(Error::IncompatibleStrides {
                a: a_strides,
                b: b_strides,
            });
        }
        let skip_strides = config.skip_strides();

        let mut store = ParamStore::new(dtype, seed);
        let m = config.width_multiplier;
        let encoder_a = build_backbone(config.encoder_a.backbone, &mut store, "encoder_a", m)?;
        let encoder_b = build_backbone(config.encoder_b.backbone, &mut store, "encoder_b", m)?;
        let ch_a = encoder_a.channels();
        let ch_b = encoder_b.channels();
        let fused = |s: usize| ch_a[&s] + ch_b[&s];

        let mut decoder = Vec::with_capacity(config.decoder_blocks.len());
        let mut c_in = fused(BOTTLENECK_STRIDE);
        for (i, spec) in config.decoder_blocks.iter().enumerate() {
            let out_stride = BOTTLENECK_STRIDE >> (i + 1);
            let skip_c = if skip_strides.contains(&out_stride) {
                fused(out_stride)
            } else {
                0
            };
            decoder.push(DecoderBlock::new(&mut store, &format!("decoder.{i}"), c_in, skip_c, spec)?);
            c_in = spec.out_channels;
        }
        let head = Conv2d::new(&mut store, "head", c_in, 1, 1, ConvOptions::default())?;

        load_pretrained(&store, &config.encoder_a, "encoder_a")?;
        load_pretrained(&store, &config.encoder_b, "encoder_b")?;
        if config.encoder_a.frozen {
            store.set_trainable("encoder_a.", false);
        }
        if config.encoder_b.frozen {
            store.set_trainable("encoder_b.", false);
        }

        let model = Self {
            config: config.clone(),
            store,
            encoder_a,
            encoder_b,
            decoder,
            head,
            skip_strides,
        };
        info!(
            "built model: {} trainable parameters (reference network: {})",
            model.count_parameters(),
            REFERENCE_PARAMETER_COUNT
        );
        Ok(model)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn count_parameters(&self) -> usize {
        self.store.count_trainable()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4().map_err(|e| Error::Shape(e.to_string()))?;
        if c != 3 || h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!(
                "expected Bx3xHxW with H, W multiples of 32, got {:?}",
                x.dims()
            )));
        }
        Ok(())
    }

    fn encoder_mode(&self, frozen: bool, mode: Mode) -> Mode {
        if frozen {
            Mode::Eval
        } else {
            mode
        }
    }

    /// Runs both backbones on the same batch.
    pub fn encode(&self, x: &Tensor, mode: Mode) -> Result<(FeaturePyramid, FeaturePyramid)> {
        self.check_input(x)?;
        let x = x.to_dtype(self.dtype())?;
        let a = self
            .encoder_a
            .forward(&x, self.encoder_mode(self.config.encoder_a.frozen, mode))?
            .select(&self.config.encoder_a.output_strides);
        let b = self
            .encoder_b
            .forward(&x, self.encoder_mode(self.config.encoder_b.frozen, mode))?
            .select(&self.config.encoder_b.output_strides);
        Ok((a, b))
    }

    /// Decoder output (before the head) after each block, for inspection.
    pub fn decode_stages(&self, fused: &FeaturePyramid, mode: Mode) -> Result<Vec<Tensor>> {
        let mut h = fused
            .get(BOTTLENECK_STRIDE)
            .ok_or_else(|| Error::Shape("fused pyramid lacks the bottleneck".into()))?
            .clone();
        let mut stages = Vec::with_capacity(self.decoder.len());
        for (i, block) in self.decoder.iter().enumerate() {
            let out_stride = BOTTLENECK_STRIDE >> (i + 1);
            let skip = if self.skip_strides.contains(&out_stride) {
                fused.get(out_stride)
            } else {
                None
            };
            h = block.forward(&h, skip, mode)?;
            stages.push(h.clone());
        }
        Ok(stages)
    }

    /// Pre-sigmoid logits, B×1×H×W.
    pub fn forward_logits(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (a, b) = self.encode(x, mode)?;
        let fused = fuse_skips(&a, &b)?;
        let stages = self.decode_stages(&fused, mode)?;
        let last = stages.last().expect("decoder has stages");
        let logits = self.head.forward(last)?;
        if !all_finite(&logits)? {
            return Err(Error::NonFiniteActivation("output logits".into()));
        }
        Ok(logits)
    }

    /// Instrument probability per pixel, B×1×H×W.
    pub fn forward_mode(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        sigmoid(&self.forward_logits(x, mode)?)
    }

    /// Inference-mode forward.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_mode(x, Mode::Eval)
    }

    /// Zeroes the output head so every prediction is exactly 0.5.
    pub fn zero_head(&self) -> Result<()> {
        self.head.weight.set(&self.head.weight.zeros_like()?)?;
        if let Some(b) = &self.head.bias {
            b.set(&b.zeros_like()?)?;
        }
        Ok(())
    }
}

pub fn build_model(config: &ModelConfig, dtype: DType, seed: u64) -> Result<SegmentationModel> {
    SegmentationModel::build(config, dtype, seed)
}

pub fn count_parameters(model: &SegmentationModel) -> usize {
    model.count_parameters()
}

/// Stacks images into a B×3×H×W tensor.
pub fn images_to_batch(images: &[&ImageTensor], dtype: DType) -> Result<Tensor> {
    let first = images.first().ok_or(Error::EmptyList)?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(Error::Shape("batch images differ in size".into()));
        }
        for c in 0..3 {
            data.extend(img.data.iter().skip(c).step_by(3).copied());
        }
    }
    let t = Tensor::from_vec(data, (images.len(), 3, h, w), &candle_core::Device::Cpu)?;
    Ok(t.to_dtype(dtype)?)
}

/// Stacks masks into a B×1×H×W tensor of 0/1 values.
pub fn masks_to_batch(masks: &[&crate::dataset::MaskTensor], dtype: DType) -> Result<Tensor> {
    let first = masks.first().ok_or(Error::EmptyList)?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if (m.height, m.width) != (h, w) {
            return Err(Error::Shape("batch masks differ in size".into()));
        }
        data.extend(m.data.iter().map(|&v| v as f32));
    }
    let t = Tensor::from_vec(data, (masks.len(), 1, h, w), &candle_core::Device::Cpu)?;
    Ok(t.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn level(c: usize, h: usize, w: usize, v: f64) -> Tensor {
        Tensor::full(v, (1, c, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn fuse_concatenates_channels() {
        let a = FeaturePyramid::new([(8, level(28, 8, 8, 1.0)), (32, level(4, 2, 2, 1.0))].into()).unwrap();
        let b = FeaturePyramid::new([(8, level(512, 8, 8, 2.0)), (32, level(4, 2, 2, 2.0))].into()).unwrap();
        let f = fuse_skips(&a, &b).unwrap();
        assert_eq!(f.channels()[&8], 540);
        assert_eq!(f.spatial()[&8], (8, 8));
    }

    #[test]
    fn fuse_self_duplicates() {
        let t = Tensor::arange(0f64, 32.0, &Device::Cpu).unwrap().reshape((1, 2, 4, 4)).unwrap();
        let a = FeaturePyramid::new([(4, t.clone())].into()).unwrap();
        let f = fuse_skips(&a, &a).unwrap();
        let fused = f.get(4).unwrap();
        let expected = Tensor::cat(&[&t, &t], 1).unwrap();
        let diff = (fused - expected).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn fuse_resamples_off_grid_levels() {
        let a = FeaturePyramid::new([(8, level(3, 8, 8, 1.0))].into()).unwrap();
        let b = FeaturePyramid::new([(8, level(5, 7, 9, 2.0))].into()).unwrap();
        let f = fuse_skips(&a, &b).unwrap();
        assert_eq!(f.spatial()[&8], (8, 8));
        assert_eq!(f.channels()[&8], 8);
    }

    #[test]
    fn fuse_stride_mismatch() {
        let a = FeaturePyramid::new([(4, level(1, 8, 8, 0.0)), (8, level(1, 4, 4, 0.0))].into()).unwrap();
        let b = FeaturePyramid::new(
            [(4, level(1, 8, 8, 0.0)), (8, level(1, 4, 4, 0.0)), (16, level(1, 2, 2, 0.0))].into(),
        )
        .unwrap();
        assert!(matches!(fuse_skips(&a, &b), Err(Error::StrideSetMismatch { .. })));
    }

    #[test]
    fn incompatible_encoder_strides() {
        let mut cfg = ModelConfig::tiny(0.125).with_input_size(64, 64);
        cfg.encoder_b.output_strides = vec![8, 16, 32];
        assert!(matches!(
            SegmentationModel::build(&cfg, DType::F32, 0),
            Err(Error::IncompatibleStrides { .. })
        ));
    }

    #[test]
    fn pretrained_without_weights_is_unavailable() {
        let mut cfg = ModelConfig::tiny(0.125).with_input_size(64, 64);
        cfg.encoder_a.pretrained = true;
        assert!(matches!(
            SegmentationModel::build(&cfg, DType::F32, 0),
            Err(Error::WeightsUnavailable(_))
        ));
    }

    #[test]
    fn pretrained_weights_are_loaded() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::tiny(0.125).with_input_size(64, 64);
        let donor = SegmentationModel::build(&cfg, DType::F32, 11).unwrap();
        let path = dir.path().join("tiny.safetensors");
        let backbone: std::collections::HashMap<String, Tensor> = donor
            .store
            .tensors()
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix("encoder_b.").map(|k| (k.to_string(), v)))
            .collect();
        candle_core::safetensors::save(&backbone, &path).unwrap();

        let mut cfg2 = cfg.clone();
        cfg2.encoder_b.pretrained = true;
        cfg2.encoder_b.weights_path = Some(path);
        cfg2.encoder_b.frozen = true;
        let model = SegmentationModel::build(&cfg2, DType::F32, 12).unwrap();
        let name = "encoder_b.stem.conv.weight";
        let v = |m: &SegmentationModel| {
            m.store.get(name).unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap()
        };
        assert_eq!(v(&donor), v(&model));
        let frozen_count: usize = model
            .store
            .params()
            .iter()
            .filter(|p| p.name.starts_with("encoder_b."))
            .map(|p| p.var.elem_count())
            .sum();
        assert_eq!(model.count_parameters(), donor.count_parameters() - frozen_count);
    }

    #[test]
    fn all_frozen_counts_zero() {
        let cfg = ModelConfig::tiny(0.125).with_input_size(64, 64);
        let mut model = SegmentationModel::build(&cfg, DType::F32, 0).unwrap();
        model.store.freeze_all();
        assert_eq!(count_parameters(&model), 0);
    }

    #[test]
    fn batching_is_channel_major() {
        let img = ImageTensor::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 1, 2).unwrap();
        let t = images_to_batch(&[&img], DType::F32).unwrap();
        assert_eq!(t.dims(), &[1, 3, 1, 2]);
        let v = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }
}
