use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::TensorDataset;
use crate::error::{Error, Result};
use crate::kernels::uniform_at;
use crate::tensor::Tensor;

const SPACING: f64 = 4.0;
const SIGMA: f64 = 0.5;
const CENTRE_SEED: u64 = 0x626c_6f62;

/// Gaussian clusters, one per class, for tests and demos without MNIST.
///
/// Class `c` is centred on `±SPACING/2` per coordinate. The first `b`
/// coordinates carry the bits of `c`, where `b` is the number of bits
/// needed to number the classes, so centres are always distinct; the rest
/// take a fixed pseudo-random sign per class and coordinate. Every sample
/// has noise `σ = 0.5`.
/// Samples are `[x f32 [dim], label i64 scalar]`; labels cycle `0, 1, ...`.
pub fn synth_blobs(n: usize, classes: usize, dim: usize, seed: u64) -> Result<TensorDataset> {
    if classes < 2 {
        return Err(Error::Config(format!(
            "synthetic blobs need at least 2 classes, got {classes}"
        )));
    }
    let bits = (usize::BITS - (classes - 1).leading_zeros()) as usize;
    if dim < bits {
        return Err(Error::Config(format!(
            "{classes} classes need at least {bits} dimensions, got {dim}"
        )));
    }
    let noise = Normal::new(0.0, SIGMA).expect("positive sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n * dim);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for j in 0..dim {
            let bit = if j < bits {
                (c >> j) & 1 == 1
            } else {
                uniform_at(CENTRE_SEED + c as u64, j as u64) < 0.5
            };
            let sign = if bit { 0.5 } else { -0.5 };
            xs.push((SPACING * sign + noise.sample(&mut rng)) as f32);
        }
        ys.push(c as i64);
    }
    TensorDataset::new(vec![Tensor::from_vec(xs, &[n, dim])?, Tensor::from_vec(ys, &[n])?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    #[test]
    fn two_class_construction() {
        let ds = synth_blobs(100, 2, 3, 1).unwrap();
        assert_eq!(ds.len(), 100);
        let labels = ds.fields()[1].to_vec::<i64>().unwrap();
        assert!(labels.iter().all(|&l| l == 0 || l == 1));
        assert_eq!(ds.get(0).unwrap()[0].dims(), [3]);
    }

    #[test]
    fn seeded_and_separated() {
        let a = synth_blobs(64, 4, 5, 9).unwrap();
        let b = synth_blobs(64, 4, 5, 9).unwrap();
        assert_eq!(
            a.fields()[0].to_vec::<f32>().unwrap(),
            b.fields()[0].to_vec::<f32>().unwrap()
        );
        let c = synth_blobs(64, 4, 5, 10).unwrap();
        assert_ne!(
            a.fields()[0].to_vec::<f32>().unwrap(),
            c.fields()[0].to_vec::<f32>().unwrap()
        );
        // Coordinate 0 encodes bit 0 of the class.
        let x = a.fields()[0].to_vec::<f32>().unwrap();
        let mean0: f64 = (0..64).filter(|i| i % 2 == 1).map(|i| x[i * 5] as f64).sum::<f64>() / 32.0;
        assert!((mean0 - 2.0).abs() < 0.3, "{mean0}");
    }

    #[test]
    fn centres_are_not_shifts_of_each_other() {
        let ds = synth_blobs(4, 4, 64, 0).unwrap();
        let x = ds.fields()[0].to_vec::<f32>().unwrap();
        let sign = |c: usize, j: usize| x[c * 64 + j] > 0.0;
        for a in 0..4 {
            for b in 0..4 {
                for shift in 1..8 {
                    let same = (8..56).all(|j| sign(a, j) == sign(b, j + shift));
                    assert!(!same, "class {b} is class {a} shifted by {shift}");
                }
            }
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(synth_blobs(10, 1, 4, 0).is_err());
        assert!(synth_blobs(10, 5, 2, 0).is_err());
    }
}
