//! Patch extraction (`im2col`) and its adjoint (`col2im`) as autograd ops.
//! Each is the other's backward pass, so convolutions and transposed
//! convolutions reduce to single matrix products in both directions.
//!
//! Columns are laid out `[C·k·k, B·Ho·Wo]`: patch rows ordered (channel, ky,
//! kx), then batch-major output positions.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

use crate::error::Result;

/// Sliding-window geometry over an image of `channels × height × width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

/// Output indices `lo..hi` whose input index `o * stride + offset` lies in
/// `0..len`.
fn valid_range(out: usize, len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset < 0 { (-offset + s - 1) / s } else { 0 };
    let last = len as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(out as isize) };
    (lo as usize, hi.max(lo) as usize)
}

impl Geometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.dilation * (self.kernel - 1) - 1) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.dilation * (self.kernel - 1) - 1) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn columns(&self) -> usize {
        self.batch * self.out_height() * self.out_width()
    }

    fn image_len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// Calls `f(col_start, img_start, count)` for every run of in-bounds taps:
    /// `count` columns from `col_start` map to image pixels from `img_start`
    /// spaced `stride` apart.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = (self.out_height(), self.out_width());
        let (h, w, k, s) = (self.height, self.width, self.kernel, self.stride);
        let npos = ho * wo;
        let ncol = self.columns();
        for b in 0..self.batch {
            for c in 0..self.channels {
                let plane = (b * self.channels + c) * h * w;
                for ky in 0..k {
                    let yoff = (ky * self.dilation) as isize - self.padding as isize;
                    let (ylo, yhi) = valid_range(ho, h, s, yoff);
                    for kx in 0..k {
                        let xoff = (kx * self.dilation) as isize - self.padding as isize;
                        let (xlo, xhi) = valid_range(wo, w, s, xoff);
                        if xhi == xlo {
                            continue;
                        }
                        let row = (c * k + ky) * k + kx;
                        for oy in ylo..yhi {
                            let iy = (oy * s) as isize + yoff;
                            let ix = (xlo * s) as isize + xoff;
                            f(
                                row * ncol + b * npos + oy * wo + xlo,
                                plane + iy as usize * w + ix as usize,
                                xhi - xlo,
                            );
                        }
                    }
                }
            }
        }
    }
}

fn contiguous_slice<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("im2col/col2im need a contiguous input"),
    }
}

fn unfold<T: Copy + Default>(src: &[T], g: &Geometry) -> Vec<T> {
    let mut out = vec![T::default(); g.patch_len() * g.columns()];
    let s = g.stride;
    g.for_each_run(|col, pix, n| {
        let dst = &mut out[col..col + n];
        if s == 1 {
            dst.copy_from_slice(&src[pix..pix + n]);
        } else {
            for (i, d) in dst.iter_mut().enumerate() {
                *d = src[pix + i * s];
            }
        }
    });
    out
}

fn fold<T: Copy + Default + std::ops::AddAssign>(src: &[T], g: &Geometry) -> Vec<T> {
    let mut out = vec![T::default(); g.image_len()];
    let s = g.stride;
    g.for_each_run(|col, pix, n| {
        let cols = &src[col..col + n];
        if s == 1 {
            for (d, &v) in out[pix..pix + n].iter_mut().zip(cols) {
                *d += v;
            }
        } else {
            for (i, &v) in cols.iter().enumerate() {
                out[pix + i * s] += v;
            }
        }
    });
    out
}

struct Im2Col(Geometry);
struct Col2Im(Geometry);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let shape = Shape::from((g.patch_len(), g.columns()));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(unfold(contiguous_slice(v, layout)?, g)),
            CpuStorage::F64(v) => CpuStorage::F64(unfold(contiguous_slice(v, layout)?, g)),
            _ => candle_core::bail!("im2col supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let shape = Shape::from((g.batch, g.channels, g.height, g.width));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(fold(contiguous_slice(v, layout)?, g)),
            CpuStorage::F64(v) => CpuStorage::F64(fold(contiguous_slice(v, layout)?, g)),
            _ => candle_core::bail!("col2im supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Im2Col(self.0))?))
    }
}

/// `B×C×H×W` to `(C·k·k)×(B·Ho·Wo)`.
pub fn im2col(x: &Tensor, g: Geometry) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Im2Col(g))?)
}

/// Adjoint of [`im2col`]: scatters patch columns back onto the image grid,
/// summing overlaps.
pub fn col2im(cols: &Tensor, g: Geometry) -> Result<Tensor> {
    Ok(cols.contiguous()?.apply_op1(Col2Im(g))?)
}

/// Repeats a length-C vector over batch and space. The backward pass sums
/// the trailing axes first, which is much faster than the generic
/// reduction behind `broadcast_*` on a `1×C×1×1` operand.
struct ExpandChannels {
    batch: usize,
    height: usize,
    width: usize,
}

fn expand<T: Copy>(v: &[T], e: &ExpandChannels) -> Vec<T> {
    let plane = e.height * e.width;
    let mut out = Vec::with_capacity(e.batch * v.len() * plane);
    for _ in 0..e.batch {
        for &x in v {
            out.extend(std::iter::repeat_n(x, plane));
        }
    }
    out
}

impl CustomOp1 for ExpandChannels {
    fn name(&self) -> &'static str {
        "expand-channels"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let c = layout.shape().elem_count();
        let shape = Shape::from((self.batch, c, self.height, self.width));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(expand(contiguous_slice(v, layout)?, self)),
            CpuStorage::F64(v) => CpuStorage::F64(expand(contiguous_slice(v, layout)?, self)),
            _ => candle_core::bail!("expand-channels supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.sum_keepdim((2, 3))?.sum_keepdim(0)?.reshape(arg.shape())?))
    }
}

/// Expands a per-channel vector (any shape with C elements) to `like`'s
/// `B×C×H×W` shape.
pub fn expand_channels(v: &Tensor, like: &Tensor) -> Result<Tensor> {
    let (batch, _, height, width) = like.dims4()?;
    Ok(v.contiguous()?.apply_op1(ExpandChannels { batch, height, width })?)
}

/// Per-channel sum of an NCHW tensor as a 1×C×1×1 tensor, reducing the
/// trailing axes first.
pub fn channel_sum(x: &Tensor) -> Result<Tensor> {
    Ok(x.sum_keepdim((2, 3))?.sum_keepdim(0)?)
}

/// `C×B×H×W` back to `B×C×H×W`.
pub(crate) fn channels_first_to_batch_first(y: &Tensor) -> Result<Tensor> {
    Ok(y.transpose(0, 1)?.contiguous()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn geometry(kernel: usize, stride: usize, padding: usize, dilation: usize) -> Geometry {
        Geometry {
            batch: 2,
            channels: 2,
            height: 5,
            width: 6,
            kernel,
            stride,
            padding,
            dilation,
        }
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        (a * b).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn valid_ranges() {
        assert_eq!(valid_range(6, 6, 1, -1), (1, 6));
        assert_eq!(valid_range(6, 6, 1, 1), (0, 5));
        assert_eq!(valid_range(3, 6, 2, -1), (1, 3));
        assert_eq!(valid_range(4, 3, 1, 5), (0, 0));
    }

    #[test]
    fn adjointness() {
        // <im2col(x), y> == <x, col2im(y)>
        for g in [
            geometry(3, 1, 1, 1),
            geometry(3, 2, 1, 1),
            geometry(3, 1, 2, 2),
            geometry(4, 2, 1, 1),
            geometry(7, 2, 3, 1),
        ] {
            let x = Tensor::randn(0f64, 1., (2, 2, 5, 6), &Device::Cpu).unwrap();
            let cols = im2col(&x, g).unwrap();
            assert_eq!(cols.dims(), &[g.patch_len(), g.columns()]);
            let y = Tensor::randn(0f64, 1., cols.dims(), &Device::Cpu).unwrap();
            let (lhs, rhs) = (dot(&cols, &y), dot(&x, &col2im(&y, g).unwrap()));
            assert!((lhs - rhs).abs() < 1e-10, "{g:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn unfold_matches_pixel_loop() {
        let g = geometry(3, 2, 2, 2);
        let x = Tensor::randn(0f64, 1., (2, 2, 5, 6), &Device::Cpu).unwrap();
        let xs = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let cols = im2col(&x, g).unwrap().to_vec2::<f64>().unwrap();
        let (ho, wo) = (g.out_height(), g.out_width());
        for b in 0..2 {
            for c in 0..2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let iy = (oy * 2 + ky * 2) as isize - 2;
                                let ix = (ox * 2 + kx * 2) as isize - 2;
                                let want = if (0..5).contains(&iy) && (0..6).contains(&ix) {
                                    xs[((b * 2 + c) * 5 + iy as usize) * 6 + ix as usize]
                                } else {
                                    0.0
                                };
                                let got = cols[(c * 3 + ky) * 3 + kx][(b * ho + oy) * wo + ox];
                                assert_eq!(got, want);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_flows_through_unfold() {
        let g = geometry(3, 1, 1, 1);
        let x = Var::from_tensor(&Tensor::ones((2, 2, 5, 6), DType::F64, &Device::Cpu).unwrap()).unwrap();
        let grads = im2col(x.as_tensor(), g).unwrap().sum_all().unwrap().backward().unwrap();
        let gx = grads.get(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        // interior pixels are covered by all 9 taps, corners by 4
        assert_eq!(gx[0], 4.0);
        assert_eq!(gx[6 + 1], 9.0);
    }

    #[test]
    fn expand_and_its_gradient() {
        let v = Var::from_tensor(&Tensor::new(&[1f64, 2., 3.], &Device::Cpu).unwrap()).unwrap();
        let like = Tensor::zeros((2, 3, 4, 5), DType::F64, &Device::Cpu).unwrap();
        let e = expand_channels(v.as_tensor(), &like).unwrap();
        let reference = v.reshape((1, 3, 1, 1)).unwrap().broadcast_as((2, 3, 4, 5)).unwrap();
        assert_eq!(
            e.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            reference.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
        let w = Tensor::randn(0f64, 1., (2, 3, 4, 5), &Device::Cpu).unwrap();
        let grads = (&e * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let want = w.sum_keepdim((0, 2, 3)).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let got = grads.get(&v).unwrap().to_vec1::<f64>().unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
