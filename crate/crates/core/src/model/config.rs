use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strides a backbone may expose.
pub const PYRAMID_STRIDES: [usize; 4] = [4, 8, 16, 32];
pub const BOTTLENECK_STRIDE: usize = 32;
/// Decoder stages needed to climb from stride 32 to full resolution.
pub const DECODER_STAGES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneId {
    /// Mobile-class extractor built from depthwise-separable blocks with the
    /// NASNet-Mobile pyramid widths (44/264/528/1056).
    BackboneA,
    /// ResNet-50 bottleneck stack (256/512/1024/2048).
    BackboneB,
    /// Small 4-stage strided residual stack, trained from scratch.
    TinyReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub backbone: BackboneId,
    #[serde(default)]
    pub pretrained: bool,
    /// safetensors file with backbone weights, required when `pretrained`.
    #[serde(default)]
    pub weights_path: Option<PathBuf>,
    pub output_strides: Vec<usize>,
    #[serde(default)]
    pub frozen: bool,
}

impl EncoderSpec {
    pub fn new(backbone: BackboneId) -> Self {
        Self {
            backbone,
            pretrained: false,
            weights_path: None,
            output_strides: PYRAMID_STRIDES.to_vec(),
            frozen: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.output_strides.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.output_strides.len() || sorted.iter().any(|s| !PYRAMID_STRIDES.contains(s)) {
            return Err(Error::InvalidConfig(format!(
                "output strides {:?} must be distinct values from {:?}",
                self.output_strides, PYRAMID_STRIDES
            )));
        }
        if !sorted.contains(&BOTTLENECK_STRIDE) {
            return Err(Error::InvalidConfig("output strides must include the stride-32 bottleneck".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderBlockSpec {
    pub out_channels: usize,
    pub aspp_dilation_rates: Vec<usize>,
    #[serde(default = "default_true")]
    pub aspp_pooling: bool,
    pub se_reduction: usize,
    #[serde(default = "default_residual_blocks")]
    pub num_residual_blocks: usize,
}

fn default_true() -> bool {
    true
}

fn default_residual_blocks() -> usize {
    2
}

impl DecoderBlockSpec {
    pub fn new(out_channels: usize, aspp_dilation_rates: Vec<usize>, se_reduction: usize) -> Self {
        Self {
            out_channels,
            aspp_dilation_rates,
            aspp_pooling: true,
            se_reduction,
            num_residual_blocks: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 || self.se_reduction == 0 {
            return Err(Error::InvalidConfig("decoder channels and SE reduction must be positive".into()));
        }
        if !self.out_channels.is_multiple_of(self.se_reduction) {
            return Err(Error::InvalidConfig(format!(
                "SE reduction {} does not divide {} channels",
                self.se_reduction, self.out_channels
            )));
        }
        let rates = &self.aspp_dilation_rates;
        if rates.is_empty() || rates.contains(&0) || rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "dilation rates {rates:?} must be positive, distinct and sorted"
            )));
        }
        if self.num_residual_blocks != 2 {
            return Err(Error::InvalidConfig("decoder blocks use exactly two residual blocks".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_a: EncoderSpec,
    pub encoder_b: EncoderSpec,
    /// One block per 2× step from stride 32 down to stride 1.
    pub decoder_blocks: Vec<DecoderBlockSpec>,
    /// `(width, height)`.
    pub input_size: (usize, usize),
    pub width_multiplier: f64,
}

pub const DEFAULT_DECODER_WIDTHS: [usize; DECODER_STAGES] = [256, 128, 64, 32, 16];
pub const DEFAULT_SE_REDUCTION: usize = 16;

/// Dilation rates by the stride a decoder block outputs at.
pub fn default_dilation_rates(output_stride: usize) -> Vec<usize> {
    if output_stride >= 16 {
        vec![1, 2, 4]
    } else {
        vec![1, 6, 12]
    }
}

/// Default decoder: widths scaled by `multiplier`, each rounded up to a
/// multiple of the SE reduction.
pub fn default_decoder(multiplier: f64, se_reduction: usize) -> Vec<DecoderBlockSpec> {
    DEFAULT_DECODER_WIDTHS
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let scaled = ((w as f64 * multiplier).round() as usize).max(1);
            let channels = scaled.div_ceil(se_reduction) * se_reduction;
            let output_stride = BOTTLENECK_STRIDE >> (i + 1);
            DecoderBlockSpec::new(channels, default_dilation_rates(output_stride), se_reduction)
        })
        .collect()
}

impl ModelConfig {
    /// Both real backbones at full width.
    pub fn full_size() -> Self {
        Self {
            encoder_a: EncoderSpec::new(BackboneId::BackboneA),
            encoder_b: EncoderSpec::new(BackboneId::BackboneB),
            decoder_blocks: default_decoder(1.0, DEFAULT_SE_REDUCTION),
            input_size: crate::dataset::DEFAULT_TARGET_SIZE,
            width_multiplier: 1.0,
        }
    }

    /// Two tiny reference backbones; runs anywhere without downloads.
    pub fn tiny(width_multiplier: f64) -> Self {
        Self {
            encoder_a: EncoderSpec::new(BackboneId::TinyReference),
            encoder_b: EncoderSpec::new(BackboneId::TinyReference),
            decoder_blocks: default_decoder(width_multiplier, DEFAULT_SE_REDUCTION),
            input_size: crate::dataset::DEFAULT_TARGET_SIZE,
            width_multiplier,
        }
    }

    pub fn with_input_size(mut self, width: usize, height: usize) -> Self {
        self.input_size = (width, height);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.input_size;
        if w == 0 || h == 0 || w % 32 != 0 || h % 32 != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {w}x{h}: width and height must be positive multiples of 32"
            )));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "width multiplier {} outside (0, 1]",
                self.width_multiplier
            )));
        }
        self.encoder_a.validate()?;
        self.encoder_b.validate()?;
        if self.decoder_blocks.len() != DECODER_STAGES {
            return Err(Error::InvalidConfig(format!(
                "expected {DECODER_STAGES} decoder blocks (stride 32 to 1), got {}",
                self.decoder_blocks.len()
            )));
        }
        for block in &self.decoder_blocks {
            block.validate()?;
        }
        Ok(())
    }

    /// Skip strides shared by both encoders, excluding the bottleneck.
    pub fn skip_strides(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self
            .encoder_a
            .output_strides
            .iter()
            .copied()
            .filter(|s| *s != BOTTLENECK_STRIDE && self.encoder_b.output_strides.contains(s))
            .collect();
        s.sort_unstable();
        s
    }

    /// Stable content hash of the serialized config.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
