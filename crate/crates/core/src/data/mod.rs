//! Composable datasets. A sample is a vector of tensors.
//!
//! Pipelines are built by wrapping one dataset in another:
//! [`TransformDataset`], [`ShuffleDataset`], [`BatchDataset`] and
//! [`PrefetchDataset`] all take and produce a [`DatasetRef`].

mod mnist;
mod prefetch;
mod synth;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use mnist::{load_mnist_dir, load_mnist_idx, parse_idx_images, parse_idx_labels, MnistSplit};
pub use prefetch::{PrefetchDataset, PrefetchIter};
pub use synth::synth_blobs;

pub type Sample = Vec<Tensor>;

pub trait Dataset: Send + Sync {
    fn len(&self) -> usize;

    /// The same index always yields the same values.
    fn get(&self, index: usize) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type DatasetRef = Arc<dyn Dataset>;

pub(crate) fn check_index(index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::Index(format!(
            "sample {index} out of range for dataset of {len}"
        )));
    }
    Ok(())
}

/// Iterates any dataset in index order.
pub fn iter(dataset: &dyn Dataset) -> impl Iterator<Item = Result<Sample>> + '_ {
    (0..dataset.len()).map(move |i| dataset.get(i))
}

/// Rows of equally long tensors: sample `i` is row `i` of every field.
#[derive(Debug, Clone)]
pub struct TensorDataset {
    fields: Vec<Tensor>,
    len: usize,
}

impl TensorDataset {
    pub fn new(fields: Vec<Tensor>) -> Result<Self> {
        let len = match fields.first() {
            Some(t) if t.rank() > 0 => t.dims()[0],
            Some(_) => return Err(Error::shape("dataset fields need a leading sample axis")),
            None => 0,
        };
        if let Some(bad) = fields.iter().find(|t| t.rank() == 0 || t.dims()[0] != len) {
            return Err(Error::shape(format!(
                "field of shape {} does not have {len} rows",
                bad.shape()
            )));
        }
        Ok(TensorDataset { fields, len })
    }

    pub fn fields(&self) -> &[Tensor] {
        &self.fields
    }
}

impl Dataset for TensorDataset {
    fn len(&self) -> usize {
        self.len
    }

    fn get(&self, index: usize) -> Result<Sample> {
        check_index(index, self.len)?;
        self.fields
            .iter()
            .map(|t| t.narrow(0, index, 1)?.reshape(&t.dims()[1..]))
            .collect()
    }
}

type TransformFn = dyn Fn(Sample) -> Result<Sample> + Send + Sync;

/// Applies a function to every sample.
pub struct TransformDataset {
    inner: DatasetRef,
    f: Box<TransformFn>,
}

impl TransformDataset {
    pub fn new(inner: DatasetRef, f: impl Fn(Sample) -> Result<Sample> + Send + Sync + 'static) -> Self {
        TransformDataset { inner, f: Box::new(f) }
    }
}

impl Dataset for TransformDataset {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        (self.f)(self.inner.get(index)?)
    }
}

/// A seeded permutation of the inner dataset.
#[derive(Clone)]
pub struct ShuffleDataset {
    inner: DatasetRef,
    order: Vec<usize>,
}

impl ShuffleDataset {
    pub fn new(inner: DatasetRef, seed: u64) -> Self {
        let mut s = ShuffleDataset {
            order: (0..inner.len()).collect(),
            inner,
        };
        s.reseed(seed);
        s
    }

    /// Draws a new permutation, e.g. once per epoch.
    pub fn reseed(&mut self, seed: u64) {
        self.order = (0..self.inner.len()).collect();
        self.order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Dataset for ShuffleDataset {
    fn len(&self) -> usize {
        self.order.len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        check_index(index, self.order.len())?;
        self.inner.get(self.order[index])
    }
}

/// Groups consecutive samples, stacking each field along a new leading axis.
pub struct BatchDataset {
    inner: DatasetRef,
    batch_size: usize,
    drop_last: bool,
}

impl BatchDataset {
    pub fn new(inner: DatasetRef, batch_size: usize, drop_last: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(BatchDataset {
            inner,
            batch_size,
            drop_last,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }
}

impl Dataset for BatchDataset {
    fn len(&self) -> usize {
        let n = self.inner.len();
        if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }

    fn get(&self, index: usize) -> Result<Sample> {
        check_index(index, self.len())?;
        let start = index * self.batch_size;
        let end = (start + self.batch_size).min(self.inner.len());
        let samples: Vec<Sample> = (start..end).map(|i| self.inner.get(i)).collect::<Result<_>>()?;
        let fields = samples[0].len();
        (0..fields)
            .map(|f| {
                let column: Vec<&Tensor> = samples
                    .iter()
                    .map(|s| {
                        s.get(f).ok_or_else(|| {
                            Error::BatchShape(format!("sample has {} fields, expected {fields}", s.len()))
                        })
                    })
                    .collect::<Result<_>>()?;
                let first = column[0];
                if let Some(odd) = column
                    .iter()
                    .find(|t| t.shape() != first.shape() || t.dtype() != first.dtype())
                {
                    return Err(Error::BatchShape(format!(
                        "field {f}: {} {} vs {} {}",
                        first.dtype(),
                        first.shape(),
                        odd.dtype(),
                        odd.shape()
                    )));
                }
                Tensor::stack(&column)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::DType;

    fn numbered(n: usize) -> DatasetRef {
        let x = Tensor::from_vec((0..n as i64).collect(), &[n]).unwrap();
        Arc::new(TensorDataset::new(vec![x]).unwrap())
    }

    fn ids(sample: &Sample) -> Vec<i64> {
        sample[0].to_vec::<i64>().unwrap()
    }

    #[test]
    fn batch_keeps_or_drops_the_tail() {
        let keep = BatchDataset::new(numbered(64), 10, false).unwrap();
        assert_eq!(keep.len(), 7);
        assert_eq!(ids(&keep.get(6).unwrap()), vec![60, 61, 62, 63]);
        let drop = BatchDataset::new(numbered(64), 10, true).unwrap();
        assert_eq!(drop.len(), 6);
        assert!(drop.get(6).is_err());
        assert!(BatchDataset::new(numbered(3), 0, false).is_err());
    }

    #[test]
    fn ragged_batch_is_rejected() {
        let ragged = TransformDataset::new(numbered(4), |s| {
            let n = s[0].scalar::<i64>()? as usize;
            Ok(vec![Tensor::zeros(&[n + 1], DType::F32)?])
        });
        let b = BatchDataset::new(Arc::new(ragged), 2, false).unwrap();
        assert!(matches!(b.get(0), Err(Error::BatchShape(_))));
    }

    #[test]
    fn shuffle_is_a_seeded_bijection() {
        let a = ShuffleDataset::new(numbered(50), 7);
        let b = ShuffleDataset::new(numbered(50), 7);
        assert_eq!(a.order(), b.order());
        let mut sorted = a.order().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        let mut c = a.clone();
        c.reseed(8);
        assert_ne!(a.order(), c.order());
        assert_eq!(ids(&a.get(3).unwrap()), vec![a.order()[3] as i64]);
    }

    #[test]
    fn tensor_dataset_rows() {
        let x = Tensor::from_vec((0..6).map(|v| v as f32).collect(), &[3, 2]).unwrap();
        let y = Tensor::from_vec(vec![0i64, 1, 0], &[3]).unwrap();
        let ds = TensorDataset::new(vec![x, y]).unwrap();
        let s = ds.get(1).unwrap();
        assert_eq!(s[0].to_vec::<f32>().unwrap(), vec![2.0, 3.0]);
        assert_eq!(s[1].rank(), 0);
        assert!(ds.get(3).is_err());
        let bad = TensorDataset::new(vec![
            Tensor::zeros(&[3], DType::F32).unwrap(),
            Tensor::zeros(&[2], DType::F32).unwrap(),
        ]);
        assert!(bad.is_err());
    }
}
