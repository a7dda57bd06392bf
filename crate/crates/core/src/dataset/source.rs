use std::sync::Arc;

use super::load::load_sample;
use super::manifest::SampleRecord;
use super::tensor::{ImageTensor, MaskTensor};
use crate::error::{Error, Result};

/// Decoded pairs held in memory above this size are loaded lazily instead.
pub const DEFAULT_CACHE_LIMIT_BYTES: usize = 1 << 30;

#[derive(Debug, Clone)]
enum Source {
    Disk(Arc<Vec<SampleRecord>>),
    Memory(Arc<Vec<(ImageTensor, MaskTensor)>>),
}

/// Indexable collection of pairs, all at one `(width, height)`.
#[derive(Debug, Clone)]
pub struct SampleSet {
    source: Source,
    size: (usize, usize),
}

impl SampleSet {
    /// Reads pairs from disk on every access.
    pub fn lazy(records: Vec<SampleRecord>, size: (usize, usize)) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyList);
        }
        Ok(Self {
            source: Source::Disk(Arc::new(records)),
            size,
        })
    }

    /// Decodes everything up front.
    pub fn cached(records: &[SampleRecord], size: (usize, usize)) -> Result<Self> {
        let pairs = records
            .iter()
            .map(|r| load_sample(r, size))
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(pairs)
    }

    /// Caches when the decoded set fits under `limit_bytes`.
    pub fn open(records: Vec<SampleRecord>, size: (usize, usize), limit_bytes: usize) -> Result<Self> {
        let per_pair = size.0 * size.1 * (3 * 4 + 1);
        if records.len().saturating_mul(per_pair) <= limit_bytes {
            if records.is_empty() {
                return Err(Error::EmptyList);
            }
            Self::cached(&records, size)
        } else {
            Self::lazy(records, size)
        }
    }

    pub fn from_pairs(pairs: Vec<(ImageTensor, MaskTensor)>) -> Result<Self> {
        let first = pairs.first().ok_or(Error::EmptyList)?;
        let size = (first.0.width, first.0.height);
        for (img, msk) in &pairs {
            if (img.width, img.height) != size || (msk.width, msk.height) != size {
                return Err(Error::Shape(format!(
                    "pair of {}x{} / {}x{} in a set of {}x{}",
                    img.width, img.height, msk.width, msk.height, size.0, size.1
                )));
            }
        }
        Ok(Self {
            source: Source::Memory(Arc::new(pairs)),
            size,
        })
    }

    pub fn len(&self) -> usize {
        match &self.source {
            Source::Disk(r) => r.len(),
            Source::Memory(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(width, height)`.
    pub fn size(&self) -> (usize, usize) {
        self.size
    }

    pub fn get(&self, index: usize) -> Result<(ImageTensor, MaskTensor)> {
        match &self.source {
            Source::Disk(r) => load_sample(&r[index], self.size),
            Source::Memory(p) => Ok(p[index].clone()),
        }
    }

    /// Mean foreground fraction of the masks.
    pub fn foreground_fraction(&self) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.len() {
            total += self.get(i)?.1.foreground_fraction();
        }
        Ok(total / self.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_set_checks_sizes() {
        let a = (ImageTensor::zeros(32, 64), MaskTensor::zeros(32, 64));
        let b = (ImageTensor::zeros(32, 32), MaskTensor::zeros(32, 32));
        let set = SampleSet::from_pairs(vec![a.clone(), a.clone()]).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.size(), (64, 32));
        assert!(SampleSet::from_pairs(vec![a, b]).is_err());
        assert!(matches!(SampleSet::from_pairs(vec![]), Err(Error::EmptyList)));
    }
}
