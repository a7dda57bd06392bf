//! Binary segmentation of surgical instruments in laparoscopic video frames.
//!
//! The crate covers the full pipeline: dataset scanning, splitting and
//! augmentation ([`dataset`]), a dual-encoder network with a residual
//! ASPP/squeeze-excite decoder ([`model`]), Dice loss and overlap metrics
//! ([`metrics`]), and training with checkpoints ([`training`]). The
//! [`cli`] module backs the `lapseg` binary.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
