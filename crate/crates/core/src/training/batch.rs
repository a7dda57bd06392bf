use candle_core::{DType, Tensor};

use crate::dataset::{Augmenter, ImageTensor, MaskTensor, SampleSet};
use crate::error::Result;
use crate::model::{images_to_batch, masks_to_batch};

fn fetch(
    data: &SampleSet,
    index: usize,
    augmenter: Option<&Augmenter>,
    epoch: usize,
) -> Result<(ImageTensor, MaskTensor)> {
    let (img, msk) = data.get(index)?;
    match augmenter {
        Some(a) => a.apply(&img, &msk, index as u64, epoch as u64),
        None => Ok((img, msk)),
    }
}

/// Decodes and (optionally) augments `indices` into an NCHW image batch and
/// a B×1×H×W mask batch. Each sample depends only on its dataset index and
/// `epoch`, and results are placed by position, so the worker count never
/// changes the batch.
pub fn assemble_batch(
    data: &SampleSet,
    indices: &[usize],
    augmenter: Option<&Augmenter>,
    epoch: usize,
    workers: usize,
    dtype: DType,
) -> Result<(Tensor, Tensor)> {
    let pairs: Vec<(ImageTensor, MaskTensor)> = if workers <= 1 || indices.len() <= 1 {
        indices
            .iter()
            .map(|&i| fetch(data, i, augmenter, epoch))
            .collect::<Result<_>>()?
    } else {
        let chunk = indices.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = indices
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|&i| fetch(data, i, augmenter, epoch))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            let mut out = Vec::with_capacity(indices.len());
            for h in handles {
                out.extend(h.join().expect("batch worker panicked")?);
            }
            Ok::<_, crate::Error>(out)
        })?
    };
    let images: Vec<&ImageTensor> = pairs.iter().map(|p| &p.0).collect();
    let masks: Vec<&MaskTensor> = pairs.iter().map(|p| &p.1).collect();
    Ok((images_to_batch(&images, dtype)?, masks_to_batch(&masks, dtype)?))
}
