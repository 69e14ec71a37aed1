use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Running (optionally weighted) mean.
#[derive(Debug, Clone, Default)]
pub struct AverageMeter {
    sum: f64,
    weight: f64,
}

impl AverageMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        self.add_weighted(value, 1.0);
    }

    pub fn add_weighted(&mut self, value: f64, weight: f64) {
        self.sum += value * weight;
        self.weight += weight;
    }

    pub fn value(&self) -> Result<f64> {
        if self.weight == 0.0 {
            return Err(Error::EmptyMeter);
        }
        Ok(self.sum / self.weight)
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// Fraction of rows whose argmax matches the target class.
#[derive(Debug, Clone, Default)]
pub struct AccuracyMeter {
    correct: u64,
    total: u64,
}

impl AccuracyMeter {
    pub fn new() -> Self {
        Self::default()
    }

    /// `predictions: [N, C]` scores, `targets: [N]` class indices.
    pub fn add(&mut self, predictions: &Tensor, targets: &Tensor) -> Result<()> {
        let d = predictions.dims();
        if d.len() != 2 || targets.dims() != [d[0]] {
            return Err(Error::shape(format!(
                "accuracy expects [N, C] and [N], got {d:?} and {:?}",
                targets.dims()
            )));
        }
        let guess = predictions.argmax(1, false)?.to_f64_vec()?;
        let truth = targets.to_f64_vec()?;
        self.correct += guess.iter().zip(&truth).filter(|(g, t)| g == t).count() as u64;
        self.total += truth.len() as u64;
        Ok(())
    }

    pub fn value(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::EmptyMeter);
        }
        Ok(self.correct as f64 / self.total as f64)
    }

    pub fn counts(&self) -> (u64, u64) {
        (self.correct, self.total)
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_of_one_two_three() {
        let mut m = AverageMeter::new();
        assert_eq!(m.value(), Err(Error::EmptyMeter));
        for v in [1.0, 2.0, 3.0] {
            m.add(v);
        }
        assert_eq!(m.value().unwrap(), 2.0);
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let mut m = AccuracyMeter::new();
        assert_eq!(m.value(), Err(Error::EmptyMeter));
        let p = Tensor::from_vec(vec![0.1f32, 0.9, 0.8, 0.2, 0.3, 0.7], &[3, 2]).unwrap();
        m.add(&p, &Tensor::from_vec(vec![1i64, 0, 1], &[3]).unwrap()).unwrap();
        assert_eq!(m.value().unwrap(), 1.0);
        m.add(&p, &Tensor::from_vec(vec![0i64, 0, 0], &[3]).unwrap()).unwrap();
        assert_eq!(m.counts(), (4, 6));
    }
}
