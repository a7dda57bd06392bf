//! Plain host-side image and mask buffers plus the resamplers shared by
//! loading and augmentation.

use crate::error::{Error, Result};

/// Row-major H×W×3 RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Vec<f32>,
    pub height: usize,
    pub width: usize,
}

/// Row-major H×W binary mask, values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskTensor {
    pub data: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Nearest,
    Bilinear,
}

impl ImageTensor {
    pub fn new(data: Vec<f32>, height: usize, width: usize) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "image buffer of {} values cannot be {height}x{width}x3",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Shape(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self { data, height, width })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: vec![0.0; height * width * 3],
            height,
            width,
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Replicates a mask into all three channels, for consistency checks
    /// that push a mask through the image path.
    pub fn from_mask(mask: &MaskTensor) -> Self {
        let data = mask
            .data
            .iter()
            .flat_map(|&v| [v as f32; 3])
            .collect::<Vec<_>>();
        Self {
            data,
            height: mask.height,
            width: mask.width,
        }
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self {
            data,
            height: img.height() as usize,
            width: img.width() as usize,
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn resize(&self, height: usize, width: usize, interp: Interpolation) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let data = match interp {
            Interpolation::Nearest => {
                let ys = nearest_index(self.height, height);
                let xs = nearest_index(self.width, width);
                let mut out = Vec::with_capacity(height * width * 3);
                for &sy in &ys {
                    for &sx in &xs {
                        out.extend_from_slice(&self.pixel(sy, sx));
                    }
                }
                out
            }
            Interpolation::Bilinear => resize_bilinear(&self.data, self.height, self.width, 3, height, width),
        };
        Self { data, height, width }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Self { data, height, width }
    }
}

impl MaskTensor {
    pub fn new(data: Vec<u8>, height: usize, width: usize) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask buffer of {} values cannot be {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::NonBinaryTarget);
        }
        Ok(Self { data, height, width })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: vec![0; height * width],
            height,
            width,
        }
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.data.iter().map(|&v| v as u64).sum::<u64>() as f64 / self.data.len() as f64
    }

    /// Masks always resample with nearest neighbour so they stay binary.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let ys = nearest_index(self.height, height);
        let xs = nearest_index(self.width, width);
        let mut data = Vec::with_capacity(height * width);
        for &sy in &ys {
            for &sx in &xs {
                data.push(self.data[sy * self.width + sx]);
            }
        }
        Self { data, height, width }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in top..top + height {
            let start = y * self.width + left;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Self { data, height, width }
    }

    /// 8-bit PNG-ready view: 0 stays 0, instrument becomes 255.
    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self.data.iter().map(|&v| if v > 0 { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }
}

/// Source index for each destination index under half-pixel-centre
/// nearest-neighbour sampling.
pub(crate) fn nearest_index(src: usize, dst: usize) -> Vec<usize> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| (((i as f64 + 0.5) * scale).floor() as usize).min(src - 1))
        .collect()
}

/// Two-tap linear weights per destination index (half-pixel centres,
/// edge-clamped).
fn linear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

pub(crate) fn resize_bilinear(
    data: &[f32],
    height: usize,
    width: usize,
    channels: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let ys = linear_taps(height, out_h);
    let xs = linear_taps(width, out_w);
    let mut out = Vec::with_capacity(out_h * out_w * channels);
    for &(y0, y1, wy) in &ys {
        for &(x0, x1, wx) in &xs {
            for c in 0..channels {
                let at = |y: usize, x: usize| data[(y * width + x) * channels + c];
                let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
                let bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
                out.push(top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_index_identity_and_doubling() {
        assert_eq!(nearest_index(4, 4), vec![0, 1, 2, 3]);
        assert_eq!(nearest_index(2, 4), vec![0, 0, 1, 1]);
        assert_eq!(nearest_index(4, 2), vec![1, 3]);
    }

    #[test]
    fn bilinear_identity_is_exact() {
        let data: Vec<f32> = (0..2 * 3 * 3).map(|v| v as f32 / 17.0).collect();
        let img = ImageTensor::new(data.clone(), 2, 3).unwrap();
        let out = img.resize(2, 3, Interpolation::Bilinear);
        assert_eq!(out.data, data);
    }

    #[test]
    fn bilinear_constant_stays_constant() {
        let img = ImageTensor::new(vec![0.25; 5 * 7 * 3], 5, 7).unwrap();
        let out = img.resize(11, 3, Interpolation::Bilinear);
        assert!(out.data.iter().all(|v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn mask_resize_stays_binary() {
        let mask = MaskTensor::new(vec![0, 1, 1, 0, 1, 0], 2, 3).unwrap();
        let out = mask.resize(7, 5);
        assert!(out.is_binary());
        assert_eq!(out.data.len(), 35);
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(ImageTensor::new(vec![1.5; 3], 1, 1).is_err());
        assert!(ImageTensor::new(vec![0.5; 4], 1, 1).is_err());
    }
}
