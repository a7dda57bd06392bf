use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::all_finite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceAggregation {
    /// Dice per sample, then the batch mean.
    #[default]
    PerSampleMean,
    /// One dice over every pixel in the batch.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiceLossConfig {
    pub smooth: f64,
    pub aggregation: DiceAggregation,
}

impl Default for DiceLossConfig {
    fn default() -> Self {
        Self {
            smooth: 1.0,
            aggregation: DiceAggregation::PerSampleMean,
        }
    }
}

impl DiceLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smooth > 0.0 && self.smooth.is_finite()) {
            return Err(Error::InvalidConfig(format!("dice smooth {} must be > 0", self.smooth)));
        }
        Ok(())
    }
}

fn check_binary(target: &Tensor) -> Result<()> {
    // t² − t vanishes exactly on {0, 1}.
    let t = target.to_dtype(DType::F64)?;
    let off = (t.sqr()? - &t)?.abs()?.sum_all()?.to_scalar::<f64>()?;
    if off != 0.0 || !off.is_finite() {
        return Err(Error::NonBinaryTarget);
    }
    Ok(())
}

/// Soft dice loss `1 − d` with `d = (2Σpg + s) / (Σp + Σg + s)`.
///
/// `probs` and `target` share a shape whose first axis is the batch. Returns a
/// rank-0 tensor that stays on the autograd graph of `probs`.
pub fn dice_loss(probs: &Tensor, target: &Tensor, config: &DiceLossConfig) -> Result<Tensor> {
    config.validate()?;
    if probs.dims() != target.dims() || probs.rank() == 0 {
        return Err(Error::Shape(format!(
            "probs {:?} and target {:?} differ",
            probs.dims(),
            target.dims()
        )));
    }
    if !all_finite(probs)? {
        return Err(Error::NonFiniteActivation("dice loss input".into()));
    }
    check_binary(target)?;
    let target = target.to_dtype(probs.dtype())?;
    let s = config.smooth;
    let p = probs.flatten_from(1)?;
    let g = target.flatten_from(1)?;
    let (inter, sum_p, sum_g) = match config.aggregation {
        DiceAggregation::PerSampleMean => ((&p * &g)?.sum(1)?, p.sum(1)?, g.sum(1)?),
        DiceAggregation::Global => ((&p * &g)?.sum_all()?, p.sum_all()?, g.sum_all()?),
    };
    let num = inter.affine(2.0, s)?;
    let den = (sum_p + sum_g)?.affine(1.0, s)?;
    let dice = (num / den)?;
    let mean = match config.aggregation {
        DiceAggregation::PerSampleMean => dice.mean(0)?,
        DiceAggregation::Global => dice,
    };
    Ok(mean.affine(-1.0, 1.0)?)
}
