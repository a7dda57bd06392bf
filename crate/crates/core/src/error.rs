use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no image/mask pairs found under {0}")]
    EmptyDataset(PathBuf),
    #[error("image {0} has no matching mask")]
    MissingMask(PathBuf),
    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("image is {image:?} but mask is {mask:?} (width, height)")]
    DimensionMismatch {
        image: (u32, u32),
        mask: (u32, u32),
    },
    #[error("invalid split ratios {0:?}: each must be >= 0, sum to 1, and train must be > 0")]
    BadRatios((f64, f64, f64)),
    #[error("crop of {crop:?} does not fit in image of {image:?} (height, width)")]
    CropLargerThanImage {
        crop: (usize, usize),
        image: (usize, usize),
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("pretrained weights unavailable for {0}")]
    WeightsUnavailable(String),
    #[error("backbones expose different pyramid strides: {a:?} vs {b:?}")]
    IncompatibleStrides { a: Vec<usize>, b: Vec<usize> },
    #[error("pyramid stride sets differ: {a:?} vs {b:?}")]
    StrideSetMismatch { a: Vec<usize>, b: Vec<usize> },
    #[error("skip of {skip:?} does not match upsampled input of {expected:?} (height, width)")]
    SkipShapeMismatch {
        skip: (usize, usize),
        expected: (usize, usize),
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("target is not binary")]
    NonBinaryTarget,
    #[error("cannot aggregate an empty list")]
    EmptyList,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("out of memory at batch size {batch_size}: {reason}")]
    OutOfMemory { batch_size: usize, reason: String },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Errors caused by bad input or a violated precondition, as opposed to
    /// failures while running. The CLI maps these to exit code 2.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::EmptyDataset(_)
                | Error::MissingMask(_)
                | Error::BadRatios(_)
                | Error::InvalidConfig(_)
                | Error::CropLargerThanImage { .. }
                | Error::DimensionMismatch { .. }
                | Error::StrideSetMismatch { .. }
                | Error::IncompatibleStrides { .. }
        )
    }
}
