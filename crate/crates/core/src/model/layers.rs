//! Primitive layers over NCHW tensors.

use candle_core::{DType, Tensor, Var};

use super::im2col::{channel_sum, channels_first_to_batch_first, col2im, expand_channels, im2col, Geometry};
use super::params::{Buffer, Init, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates.
    Train,
    /// Running statistics only; deterministic.
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvOptions {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub bias: bool,
}

impl Default for ConvOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            bias: true,
        }
    }
}

impl ConvOptions {
    /// "Same" padding for an odd kernel at the given dilation.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            padding: dilation * (kernel - 1) / 2,
            dilation,
            ..Self::default()
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub options: ConvOptions,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        options: ConvOptions,
    ) -> Result<Self> {
        let weight = store.param(
            &format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            Init::FanInUniform {
                fan_in: in_channels * kernel * kernel,
            },
        )?;
        let bias = if options.bias {
            Some(store.param(&format!("{name}.bias"), &[out_channels], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias, options })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let o = self.options;
        let (b, c, h, w) = x.dims4()?;
        let (co, _, k, _) = self.weight.dims4()?;
        let g = Geometry {
            batch: b,
            channels: c,
            height: h,
            width: w,
            kernel: k,
            stride: o.stride,
            padding: o.padding,
            dilation: o.dilation,
        };
        // One GEMM over the whole batch: (Co × CKK) · (CKK × B·HoWo).
        let cols = im2col(x, g)?;
        let wm = self.weight.as_tensor().reshape((co, g.patch_len()))?;
        let y = wm.matmul(&cols)?.reshape((co, b, g.out_height(), g.out_width()))?;
        add_channel_bias(channels_first_to_batch_first(&y)?, self.bias.as_ref())
    }
}

fn add_channel_bias(y: Tensor, bias: Option<&Var>) -> Result<Tensor> {
    match bias {
        Some(b) => Ok((&y + expand_channels(b.as_tensor(), &y)?)?),
        None => Ok(y),
    }
}

/// Learnable 2× upsampling: kernel 4, stride 2, padding 1 maps H to 2H.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl ConvTranspose2d {
    pub const KERNEL: usize = 4;

    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        let k = Self::KERNEL;
        let weight = store.param(
            &format!("{name}.weight"),
            &[in_channels, out_channels, k, k],
            // Each output pixel sees a quarter of the kernel taps.
            Init::FanInUniform {
                fan_in: in_channels * k * k / 4,
            },
        )?;
        let bias = Some(store.param(&format!("{name}.bias"), &[out_channels], Init::Zeros)?);
        Ok(Self { weight, bias })
    }

    /// The adjoint of a stride-2 convolution: one matrix product into patch
    /// columns, then `col2im` onto the doubled grid.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, ci, h, w) = x.dims4()?;
        let (_, co, k, _) = self.weight.dims4()?;
        let g = Geometry {
            batch: b,
            channels: co,
            height: 2 * h,
            width: 2 * w,
            kernel: k,
            stride: 2,
            padding: 1,
            dilation: 1,
        };
        let wt = self.weight.as_tensor().reshape((ci, co * k * k))?.t()?.contiguous()?;
        let xm = x.transpose(0, 1)?.contiguous()?.reshape((ci, b * h * w))?;
        let cols = wt.matmul(&xm)?;
        let y = col2im(&cols, g)?;
        add_channel_bias(y, self.bias.as_ref())
    }
}

/// Per-channel 3×3 convolution (padding 1) as a batched 1×9 matrix product
/// over patch columns.
#[derive(Debug, Clone)]
pub struct DepthwiseConv3x3 {
    pub weight: Var,
    pub stride: usize,
}

impl DepthwiseConv3x3 {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, stride: usize) -> Result<Self> {
        let weight = store.param(&format!("{name}.weight"), &[channels, 1, 3, 3], Init::FanInUniform { fan_in: 9 })?;
        Ok(Self { weight, stride })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let g = Geometry {
            batch: b,
            channels: c,
            height: h,
            width: w,
            kernel: 3,
            stride: self.stride,
            padding: 1,
            dilation: 1,
        };
        let (ho, wo) = (g.out_height(), g.out_width());
        // Per channel: (1×9) · (9×B·HoWo).
        let cols = im2col(x, g)?.reshape((c, 9, b * ho * wo))?;
        let taps = self.weight.as_tensor().reshape((c, 1, 9))?;
        let y = taps.matmul(&cols)?.reshape((c, b, ho, wo))?;
        channels_first_to_batch_first(&y)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub weight: Var,
    pub bias: Var,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: store.param(&format!("{name}.weight"), &[channels], Init::Ones)?,
            bias: store.param(&format!("{name}.bias"), &[channels], Init::Zeros)?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], Init::Zeros)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], Init::Ones)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, _, h, w) = x.dims4()?;
        let gamma = self.weight.as_tensor();
        let beta = self.bias.as_tensor();
        match mode {
            Mode::Train => {
                let n = (b * h * w) as f64;
                let mean = channel_sum(x)?.flatten_all()?.affine(1.0 / n, 0.0)?;
                let centered = (x - expand_channels(&mean, x)?)?;
                let var = channel_sum(&centered.sqr()?)?.flatten_all()?.affine(1.0 / n, 0.0)?;
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let m = self.momentum;
                let new_mean = ((self.running_mean.get() * (1.0 - m))? + (mean.detach() * m)?)?;
                let new_var = ((self.running_var.get() * (1.0 - m))? + (var.detach() * (m * unbiased))?)?;
                self.running_mean.set(new_mean);
                self.running_var.set(new_var);
                let scale = (gamma / (var + self.eps)?.sqrt()?)?;
                Ok(((centered * expand_channels(&scale, x)?)? + expand_channels(beta, x)?)?)
            }
            Mode::Eval => {
                let scale = (gamma / (self.running_var.get() + self.eps)?.sqrt()?)?;
                let shift = (beta - (self.running_mean.get() * &scale)?)?;
                Ok(((x * expand_channels(&scale, x)?)? + expand_channels(&shift, x)?)?)
            }
        }
    }
}

/// Logistic function in the `tanh` form, whose gradient stays finite for
/// large-magnitude inputs. `sigmoid(0)` is exactly 0.5.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

/// Mean over H and W, keeping a 1×1 spatial map.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean_keepdim((2, 3))?)
}

/// Row-stochastic matrix (dst × src) for half-pixel-centre linear
/// interpolation along one axis.
fn interpolation_matrix(src: usize, dst: usize, dtype: DType) -> Result<Tensor> {
    let mut m = vec![0f64; dst * src];
    let scale = src as f64 / dst as f64;
    for i in 0..dst {
        let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(src - 1);
        let i1 = (i0 + 1).min(src - 1);
        let f = s - i0 as f64;
        m[i * src + i0] += 1.0 - f;
        m[i * src + i1] += f;
    }
    Ok(Tensor::from_vec(m, (dst, src), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// Bilinear resize of an NCHW tensor as two matrix products, so it is
/// differentiable.
pub fn resize_bilinear(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if (h, w) == (height, width) {
        return Ok(x.clone());
    }
    let ry = interpolation_matrix(h, height, x.dtype())?;
    let rx_t = interpolation_matrix(w, width, x.dtype())?.t()?;
    let flat = x.reshape((b * c, h, w))?;
    let rows = ry.broadcast_matmul(&flat)?;
    let out = rows.broadcast_matmul(&rx_t)?;
    Ok(out.reshape((b, c, height, width))?)
}

/// True when every element is finite.
pub fn all_finite(x: &Tensor) -> Result<bool> {
    let s = x.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    Ok(s.is_finite())
}
