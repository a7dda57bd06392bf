//! Pluggable feature extractors and the multi-scale pyramid they emit.

use std::collections::BTreeMap;

use candle_core::Tensor;

use super::blocks::ResidualBlock;
use super::config::{BackboneId, PYRAMID_STRIDES};
use super::layers::{BatchNorm, Conv2d, ConvOptions, DepthwiseConv3x3, Mode};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Feature maps keyed by stride, smallest stride first.
#[derive(Debug, Clone, Default)]
pub struct FeaturePyramid {
    pub levels: BTreeMap<usize, Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: BTreeMap<usize, Tensor>) -> Result<Self> {
        let p = Self { levels };
        p.validate()?;
        Ok(p)
    }

    pub fn strides(&self) -> Vec<usize> {
        self.levels.keys().copied().collect()
    }

    pub fn get(&self, stride: usize) -> Option<&Tensor> {
        self.levels.get(&stride)
    }

    pub fn channels(&self) -> BTreeMap<usize, usize> {
        self.levels.iter().map(|(&s, t)| (s, t.dims()[1])).collect()
    }

    /// `(height, width)` per stride.
    pub fn spatial(&self) -> BTreeMap<usize, (usize, usize)> {
        self.levels.iter().map(|(&s, t)| (s, (t.dims()[2], t.dims()[3]))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<(usize, usize)> = None;
        for (&s, t) in &self.levels {
            let (_, _, h, w) = t.dims4()?;
            if h == 0 || w == 0 {
                return Err(Error::Shape(format!("pyramid level {s} is empty")));
            }
            if let Some((ph, pw)) = prev {
                if h > ph || w > pw {
                    return Err(Error::Shape(format!(
                        "pyramid level {s} ({h}x{w}) is larger than a finer level"
                    )));
                }
            }
            prev = Some((h, w));
        }
        Ok(())
    }

    /// Keeps only `strides`.
    pub fn select(mut self, strides: &[usize]) -> Self {
        self.levels.retain(|s, _| strides.contains(s));
        self
    }
}

/// A backbone truncated to emit maps at strides 4, 8, 16 and 32.
pub trait FeatureExtractor: Send + Sync + std::fmt::Debug {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<FeaturePyramid>;
    /// Output channels per stride.
    fn channels(&self) -> BTreeMap<usize, usize>;
}

fn scaled(c: usize, multiplier: f64) -> usize {
    ((c as f64 * multiplier).round() as usize).max(1)
}

fn pyramid_from(outputs: Vec<Tensor>) -> Result<FeaturePyramid> {
    FeaturePyramid::new(PYRAMID_STRIDES.iter().copied().zip(outputs).collect())
}

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBn {
    fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(
                store,
                &format!("{name}.conv"),
                c_in,
                c_out,
                kernel,
                ConvOptions::same(kernel, 1).stride(stride).no_bias(),
            )?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), c_out)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?, mode)
    }
}

/// Stem at stride 2 followed by four strided residual stages.
#[derive(Debug, Clone)]
pub struct TinyReference {
    stem: ConvBn,
    stages: Vec<ResidualBlock>,
    widths: [usize; 4],
}

impl TinyReference {
    pub const BASE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
    pub const BASE_STEM: usize = 32;

    pub fn new(store: &mut ParamStore, name: &str, multiplier: f64) -> Result<Self> {
        let stem_c = scaled(Self::BASE_STEM, multiplier);
        let widths = Self::BASE_WIDTHS.map(|c| scaled(c, multiplier));
        let stem = ConvBn::new(store, &format!("{name}.stem"), 3, stem_c, 3, 2)?;
        let mut c_in = stem_c;
        let mut stages = Vec::new();
        for (i, &c) in widths.iter().enumerate() {
            stages.push(ResidualBlock::strided(store, &format!("{name}.stage{}", i + 1), c_in, c, 2)?);
            c_in = c;
        }
        Ok(Self { stem, stages, widths })
    }
}

impl FeatureExtractor for TinyReference {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<FeaturePyramid> {
        let mut h = self.stem.forward(x, mode)?.relu()?;
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            h = stage.forward(&h, mode)?;
            outs.push(h.clone());
        }
        pyramid_from(outs)
    }

    fn channels(&self) -> BTreeMap<usize, usize> {
        PYRAMID_STRIDES.iter().copied().zip(self.widths).collect()
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    reduce: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
    downsample: Option<ConvBn>,
}

impl Bottleneck {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.reduce.forward(x, mode)?.relu()?;
        let h = self.spatial.forward(&h, mode)?.relu()?;
        let h = self.expand.forward(&h, mode)?;
        let shortcut = match &self.downsample {
            Some(d) => d.forward(x, mode)?,
            None => x.clone(),
        };
        Ok((h + shortcut)?.relu()?)
    }
}

/// ResNet-50 layout: 7×7 stem, 3×3 max-pool, bottleneck stages of
/// 3/4/6/3 blocks with expansion 4 and the stride on the 3×3 convolution.
#[derive(Debug, Clone)]
pub struct ResNet50 {
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
    widths: [usize; 4],
}

impl ResNet50 {
    pub const DEPTHS: [usize; 4] = [3, 4, 6, 3];
    pub const PLANES: [usize; 4] = [64, 128, 256, 512];
    pub const EXPANSION: usize = 4;

    pub fn new(store: &mut ParamStore, name: &str, multiplier: f64) -> Result<Self> {
        let stem_c = scaled(64, multiplier);
        let stem = ConvBn::new(store, &format!("{name}.stem"), 3, stem_c, 7, 2)?;
        let mut c_in = stem_c;
        let mut stages = Vec::new();
        let mut widths = [0; 4];
        for (i, (&depth, &planes)) in Self::DEPTHS.iter().zip(&Self::PLANES).enumerate() {
            let planes = scaled(planes, multiplier);
            let c_out = planes * Self::EXPANSION;
            let mut blocks = Vec::with_capacity(depth);
            for j in 0..depth {
                let stride = if j == 0 && i > 0 { 2 } else { 1 };
                let p = format!("{name}.layer{}.{j}", i + 1);
                let downsample = if j == 0 {
                    Some(ConvBn::new(store, &format!("{p}.downsample"), c_in, c_out, 1, stride)?)
                } else {
                    None
                };
                blocks.push(Bottleneck {
                    reduce: ConvBn::new(store, &format!("{p}.reduce"), c_in, planes, 1, 1)?,
                    spatial: ConvBn::new(store, &format!("{p}.spatial"), planes, planes, 3, stride)?,
                    expand: ConvBn::new(store, &format!("{p}.expand"), planes, c_out, 1, 1)?,
                    downsample,
                });
                c_in = c_out;
            }
            widths[i] = c_out;
            stages.push(blocks);
        }
        Ok(Self { stem, stages, widths })
    }
}

impl FeatureExtractor for ResNet50 {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<FeaturePyramid> {
        let h = self.stem.forward(x, mode)?.relu()?;
        // Zero padding is equivalent to -inf padding after the ReLU.
        let mut h = h
            .pad_with_zeros(2, 1, 1)?
            .pad_with_zeros(3, 1, 1)?
            .max_pool2d_with_stride((3, 3), (2, 2))?;
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                h = block.forward(&h, mode)?;
            }
            outs.push(h.clone());
        }
        pyramid_from(outs)
    }

    fn channels(&self) -> BTreeMap<usize, usize> {
        PYRAMID_STRIDES.iter().copied().zip(self.widths).collect()
    }
}

/// Depthwise 3×3 → BN → ReLU → pointwise 1×1 → BN, residual when the shape
/// is preserved, then ReLU.
#[derive(Debug, Clone)]
struct SeparableBlock {
    depthwise: DepthwiseConv3x3,
    bn_dw: BatchNorm,
    pointwise: ConvBn,
    residual: bool,
}

impl SeparableBlock {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            depthwise: DepthwiseConv3x3::new(store, &format!("{name}.depthwise"), c_in, stride)?,
            bn_dw: BatchNorm::new(store, &format!("{name}.bn_dw"), c_in)?,
            pointwise: ConvBn::new(store, &format!("{name}.pointwise"), c_in, c_out, 1, 1)?,
            residual: c_in == c_out && stride == 1,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.bn_dw.forward(&self.depthwise.forward(x)?, mode)?.relu()?;
        let h = self.pointwise.forward(&h, mode)?;
        let h = if self.residual { (h + x)? } else { h };
        Ok(h.relu()?)
    }
}

/// Mobile-class extractor with the NASNet-Mobile pyramid widths, built from
/// depthwise-separable blocks instead of searched cells.
#[derive(Debug, Clone)]
pub struct SeparableNet {
    stem: ConvBn,
    stages: Vec<Vec<SeparableBlock>>,
    widths: [usize; 4],
}

impl SeparableNet {
    pub const BASE_WIDTHS: [usize; 4] = [44, 264, 528, 1056];
    /// Blocks per stage, the first of each being strided.
    pub const DEPTHS: [usize; 4] = [1, 3, 4, 4];
    pub const BASE_STEM: usize = 32;

    pub fn new(store: &mut ParamStore, name: &str, multiplier: f64) -> Result<Self> {
        let stem_c = scaled(Self::BASE_STEM, multiplier);
        let stem = ConvBn::new(store, &format!("{name}.stem"), 3, stem_c, 3, 2)?;
        let widths = Self::BASE_WIDTHS.map(|c| scaled(c, multiplier));
        let mut c_in = stem_c;
        let mut stages = Vec::new();
        for (i, (&depth, &c)) in Self::DEPTHS.iter().zip(&widths).enumerate() {
            let mut blocks = Vec::with_capacity(depth);
            for j in 0..depth {
                let stride = if j == 0 { 2 } else { 1 };
                let p = format!("{name}.stage{}.{j}", i + 1);
                blocks.push(SeparableBlock::new(store, &p, c_in, c, stride)?);
                c_in = c;
            }
            stages.push(blocks);
        }
        Ok(Self { stem, stages, widths })
    }
}

impl FeatureExtractor for SeparableNet {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<FeaturePyramid> {
        let mut h = self.stem.forward(x, mode)?.relu()?;
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                h = block.forward(&h, mode)?;
            }
            outs.push(h.clone());
        }
        pyramid_from(outs)
    }

    fn channels(&self) -> BTreeMap<usize, usize> {
        PYRAMID_STRIDES.iter().copied().zip(self.widths).collect()
    }
}

pub fn build_backbone(
    id: BackboneId,
    store: &mut ParamStore,
    name: &str,
    multiplier: f64,
) -> Result<Box<dyn FeatureExtractor>> {
    Ok(match id {
        BackboneId::TinyReference => Box::new(TinyReference::new(store, name, multiplier)?),
        BackboneId::BackboneB => Box::new(ResNet50::new(store, name, multiplier)?),
        BackboneId::BackboneA => Box::new(SeparableNet::new(store, name, multiplier)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn resnet50_parameter_count_matches_reference() {
        // torchvision resnet50: 25,557,032 total, minus the 2048x1000 fc
        // layer and its bias.
        let mut s = ParamStore::new(DType::F32, 0);
        ResNet50::new(&mut s, "b", 1.0).unwrap();
        assert_eq!(s.count_trainable(), 25_557_032 - 2048 * 1000 - 1000);
    }

    #[test]
    fn pyramid_strides_and_channels() {
        let x = Tensor::zeros((2, 3, 64, 96), DType::F32, &Device::Cpu).unwrap();
        for id in [BackboneId::TinyReference, BackboneId::BackboneA, BackboneId::BackboneB] {
            let mut s = ParamStore::new(DType::F32, 0);
            let net = build_backbone(id, &mut s, "enc", 0.125).unwrap();
            let p = net.forward(&x, Mode::Eval).unwrap();
            let spatial = p.spatial();
            assert_eq!(spatial[&4], (16, 24), "{id:?}");
            assert_eq!(spatial[&8], (8, 12));
            assert_eq!(spatial[&16], (4, 6));
            assert_eq!(spatial[&32], (2, 3));
            assert_eq!(p.channels(), net.channels());
        }
    }

    #[test]
    fn pyramid_rejects_growing_levels() {
        let small = Tensor::zeros((1, 2, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let big = Tensor::zeros((1, 2, 8, 8), DType::F32, &Device::Cpu).unwrap();
        let levels = [(4, small), (8, big)].into_iter().collect();
        assert!(FeaturePyramid::new(levels).is_err());
    }
}
