use std::path::Path;

use image::DynamicImage;

use super::manifest::SampleRecord;
use super::tensor::{ImageTensor, Interpolation, MaskTensor};
use crate::error::{Error, Result};

/// Any label above zero is instrument.
pub fn binarize_mask<T>(raw: &[T], height: usize, width: usize) -> Result<MaskTensor>
where
    T: Copy + PartialOrd + Default,
{
    let zero = T::default();
    let data = raw.iter().map(|&v| u8::from(v > zero)).collect();
    MaskTensor::new(data, height, width)
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn read_image(path: &Path) -> Result<ImageTensor> {
    Ok(ImageTensor::from_rgb8(&open(path)?.to_rgb8()))
}

/// Decodes a label image and binarizes it. Grayscale masks keep their raw
/// labels; colour masks count a pixel as instrument when any channel is set.
pub fn read_mask(path: &Path) -> Result<MaskTensor> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(m) => binarize_mask(m.as_raw(), h, w),
        DynamicImage::ImageLuma16(m) => binarize_mask(m.as_raw(), h, w),
        other => {
            let rgb = other.to_rgb8();
            let raw: Vec<u8> = rgb.pixels().map(|p| p.0[0].max(p.0[1]).max(p.0[2])).collect();
            binarize_mask(&raw, h, w)
        }
    }
}

/// Loads one pair at `target_size = (width, height)`: bilinear for the image,
/// nearest for the mask.
pub fn load_sample(record: &SampleRecord, target_size: (usize, usize)) -> Result<(ImageTensor, MaskTensor)> {
    let (tw, th) = target_size;
    if tw == 0 || th == 0 || tw % 32 != 0 || th % 32 != 0 {
        return Err(Error::InvalidConfig(format!(
            "target size {tw}x{th} must be positive and divisible by 32"
        )));
    }
    let image = read_image(&record.image_path)?;
    let mask = read_mask(&record.mask_path)?;
    if (image.width, image.height) != (mask.width, mask.height) {
        return Err(Error::DimensionMismatch {
            image: (image.width as u32, image.height as u32),
            mask: (mask.width as u32, mask.height as u32),
        });
    }
    Ok((image.resize(th, tw, Interpolation::Bilinear), mask.resize(th, tw)))
}
