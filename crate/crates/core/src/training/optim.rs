use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};

use super::config::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{ParamStore, EXTRA_PREFIX};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// SGD with momentum (heavy-ball, first buffer = first gradient) or Adam.
/// State is keyed by parameter name so it can be checkpointed.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Optimizer {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            kind: config.optimizer,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Updates every trainable parameter that has a gradient. Returns how
    /// many were updated.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64) -> Result<usize> {
        self.steps += 1;
        let mut updated = 0;
        for p in store.trainable() {
            let Some(g) = grads.get(p.var.as_tensor()) else {
                continue;
            };
            let w = p.var.as_tensor().detach();
            let mut g = g.detach();
            if self.weight_decay != 0.0 {
                g = (g + w.affine(self.weight_decay, 0.0)?)?;
            }
            let new = match self.kind {
                OptimizerKind::Sgd => {
                    let v = match self.first.get(&p.name) {
                        Some(v) if self.momentum != 0.0 => (v.affine(self.momentum, 0.0)? + &g)?,
                        _ => g,
                    };
                    let new = (&w - v.affine(lr, 0.0)?)?;
                    self.first.insert(p.name.clone(), v);
                    new
                }
                OptimizerKind::Adam => {
                    let m = match self.first.get(&p.name) {
                        Some(m) => (m.affine(ADAM_BETA1, 0.0)? + g.affine(1.0 - ADAM_BETA1, 0.0)?)?,
                        None => g.affine(1.0 - ADAM_BETA1, 0.0)?,
                    };
                    let g2 = g.sqr()?;
                    let v = match self.second.get(&p.name) {
                        Some(v) => (v.affine(ADAM_BETA2, 0.0)? + g2.affine(1.0 - ADAM_BETA2, 0.0)?)?,
                        None => g2.affine(1.0 - ADAM_BETA2, 0.0)?,
                    };
                    let t = self.steps as i32;
                    let m_hat = m.affine(1.0 / (1.0 - ADAM_BETA1.powi(t)), 0.0)?;
                    let v_hat = v.affine(1.0 / (1.0 - ADAM_BETA2.powi(t)), 0.0)?;
                    let update = (m_hat / v_hat.sqrt()?.affine(1.0, ADAM_EPS)?)?;
                    let new = (&w - update.affine(lr, 0.0)?)?;
                    self.first.insert(p.name.clone(), m);
                    self.second.insert(p.name.clone(), v);
                    new
                }
            };
            p.var.set(&new)?;
            updated += 1;
        }
        Ok(updated)
    }

    /// State as named tensors for the checkpoint weight file.
    pub fn state_tensors(&self) -> Result<HashMap<String, Tensor>> {
        let mut map = HashMap::new();
        for (k, v) in &self.first {
            map.insert(format!("{EXTRA_PREFIX}first.{k}"), v.clone());
        }
        for (k, v) in &self.second {
            map.insert(format!("{EXTRA_PREFIX}second.{k}"), v.clone());
        }
        map.insert(
            format!("{EXTRA_PREFIX}steps"),
            Tensor::new(&[self.steps as f64], &Device::Cpu)?,
        );
        Ok(map)
    }

    pub fn load_state(&mut self, tensors: &HashMap<String, Tensor>, dtype: DType) -> Result<()> {
        self.first.clear();
        self.second.clear();
        for (k, v) in tensors {
            let Some(rest) = k.strip_prefix(EXTRA_PREFIX) else {
                continue;
            };
            if let Some(name) = rest.strip_prefix("first.") {
                self.first.insert(name.to_string(), v.to_dtype(dtype)?);
            } else if let Some(name) = rest.strip_prefix("second.") {
                self.second.insert(name.to_string(), v.to_dtype(dtype)?);
            }
        }
        let steps = tensors
            .get(&format!("{EXTRA_PREFIX}steps"))
            .ok_or_else(|| Error::Checkpoint {
                path: Default::default(),
                reason: "optimizer step count missing".into(),
            })?;
        self.steps = steps.to_dtype(DType::F64)?.to_vec1::<f64>()?[0] as u64;
        Ok(())
    }
}
