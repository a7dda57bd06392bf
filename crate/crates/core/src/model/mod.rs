//! The dual-encoder segmentation network.
//!
//! Two backbones run side by side on the same input. Their pyramids are
//! concatenated per stride into skip maps; the stride-32 level feeds a
//! decoder of five blocks, each doubling resolution, and a 1×1 sigmoid head
//! gives the instrument probability map.

mod backbone;
mod blocks;
mod checkpoint;
mod config;
mod im2col;
mod layers;
mod network;
mod params;

pub use backbone::{build_backbone, FeatureExtractor, FeaturePyramid, ResNet50, SeparableNet, TinyReference};
pub use blocks::{Aspp, DecoderBlock, ResidualBlock, SqueezeExcite};
pub use checkpoint::{
    load_checkpoint, read_sidecar, save_checkpoint, sidecar_path, CheckpointSidecar, LoadedCheckpoint, TrainingState,
    EXTRA_PREFIX,
};
pub use config::{
    default_decoder, default_dilation_rates, BackboneId, DecoderBlockSpec, EncoderSpec, ModelConfig,
    BOTTLENECK_STRIDE, DECODER_STAGES, DEFAULT_DECODER_WIDTHS, DEFAULT_SE_REDUCTION, PYRAMID_STRIDES,
};
pub use im2col::{channel_sum, col2im, expand_channels, im2col, Geometry};
pub use layers::{
    all_finite, global_avg_pool, resize_bilinear, sigmoid, BatchNorm, Conv2d, ConvOptions, ConvTranspose2d,
    DepthwiseConv3x3, Mode,
};
pub use network::{
    build_model, count_parameters, fuse_skips, images_to_batch, masks_to_batch, SegmentationModel,
    REFERENCE_PARAMETER_COUNT,
};
pub use params::{Buffer, Init, Param, ParamStore};
