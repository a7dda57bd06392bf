use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `±1/sqrt(fan_in)`, the usual framework default for
    /// convolutions. Smaller than He scaling, which lets plain SGD move the
    /// batch-normalised layers faster.
    FanInUniform { fan_in: usize },
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub var: Var,
    pub trainable: bool,
}

/// Non-trainable state that forward passes may update (batch-norm running
/// statistics). Shared so that clones of a layer see the same values.
#[derive(Debug, Clone)]
pub struct Buffer(Arc<RwLock<Tensor>>);

impl Buffer {
    pub fn new(t: Tensor) -> Self {
        Self(Arc::new(RwLock::new(t)))
    }

    pub fn get(&self) -> Tensor {
        self.0.read().expect("buffer lock poisoned").clone()
    }

    pub fn set(&self, t: Tensor) {
        *self.0.write().expect("buffer lock poisoned") = t;
    }
}

/// Owns every weight of a model under a dotted name, initialised from a
/// seeded stream in creation order so that equal seeds give equal weights.
#[derive(Debug)]
pub struct ParamStore {
    device: Device,
    dtype: DType,
    rng: ChaCha8Rng,
    params: Vec<Param>,
    buffers: Vec<(String, Buffer)>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            device: Device::Cpu,
            dtype,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanInUniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.params.push(Param {
            name: name.to_string(),
            var: var.clone(),
            trainable: true,
        });
        Ok(var)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Buffer> {
        let value = match init {
            Init::Ones => 1.0,
            _ => 0.0,
        };
        let t = Tensor::full(value, shape, &self.device)?.to_dtype(self.dtype)?;
        let b = Buffer::new(t);
        self.buffers.push((name.to_string(), b.clone()));
        Ok(b)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.trainable)
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.trainable().map(|p| p.var.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.var)
    }

    pub fn count_trainable(&self) -> usize {
        self.trainable().map(|p| p.var.elem_count()).sum()
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    pub fn freeze_all(&mut self) {
        self.set_trainable("", false);
    }

    /// All parameters and buffers, keyed by name.
    pub fn tensors(&self) -> HashMap<String, Tensor> {
        let mut map: HashMap<String, Tensor> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.var.as_tensor().clone()))
            .collect();
        for (name, b) in &self.buffers {
            map.insert(name.clone(), b.get());
        }
        map
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.tensors(), path)?;
        Ok(())
    }

    /// Copies values from `tensors` into every entry whose name starts with
    /// `prefix`, after stripping `strip` from the stored name. Every such
    /// entry must be present with the same shape.
    pub fn load_from(&self, tensors: &HashMap<String, Tensor>, prefix: &str, strip: &str) -> Result<usize> {
        let lookup = |name: &str| -> Result<Tensor> {
            let key = name.strip_prefix(strip).unwrap_or(name);
            let t = tensors
                .get(key)
                .ok_or_else(|| Error::Shape(format!("weights missing tensor {key:?}")))?;
            Ok(t.to_dtype(self.dtype)?)
        };
        let mut loaded = 0;
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            let t = lookup(&p.name)?;
            if t.dims() != p.var.dims() {
                return Err(Error::Shape(format!(
                    "{}: stored shape {:?} != model shape {:?}",
                    p.name,
                    t.dims(),
                    p.var.dims()
                )));
            }
            p.var.set(&t)?;
            loaded += 1;
        }
        for (name, b) in self.buffers.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let t = lookup(name)?;
            if t.dims() != b.get().dims() {
                return Err(Error::Shape(format!("{name}: buffer shape mismatch")));
            }
            b.set(t);
            loaded += 1;
        }
        Ok(loaded)
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, &self.device)?;
        self.load_from(&tensors, "", "")?;
        Ok(())
    }
}
