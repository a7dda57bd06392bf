//! Dataset indexing, splitting, loading and paired augmentation.

mod augment;
mod load;
mod manifest;
mod source;
mod synthetic;
mod tensor;

pub use augment::{
    apply_to_image, apply_to_mask, augment, plan_augmentation, sample_seed, AppliedOp, AugmentOp, AugmentStats,
    AugmentationConfig, Augmenter,
};
pub use load::{binarize_mask, load_sample, read_image, read_mask};
pub use manifest::{scan_dataset, split_manifest, split_sizes, Layout, Manifest, SampleRecord, Split, MANIFEST_HEADER};
pub use source::{SampleSet, DEFAULT_CACHE_LIMIT_BYTES};
pub use synthetic::{synthetic_pair, synthetic_pairs, write_synthetic_dataset};
pub use tensor::{ImageTensor, Interpolation, MaskTensor};

/// Training resolution `(width, height)`.
pub const DEFAULT_TARGET_SIZE: (usize, usize) = (512, 256);

/// Default train/val/test ratios.
pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);
