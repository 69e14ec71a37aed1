use crate::autograd::Variable;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Negative log-likelihood of integer `targets` `[N]` under
/// log-probabilities `[N, C]`.
pub fn categorical_cross_entropy(log_probs: &Variable, targets: &Tensor, reduction: Reduction) -> Result<Variable> {
    let d = log_probs.dims();
    if d.len() != 2 || targets.dims() != [d[0]] {
        return Err(Error::shape(format!(
            "cross entropy expects [N, C] log-probs and [N] targets, got {d:?} and {:?}",
            targets.dims()
        )));
    }
    let (n, classes) = (d[0], d[1]);
    for (i, t) in targets.to_f64_vec()?.into_iter().enumerate() {
        if t < 0.0 || t >= classes as f64 || t.fract() != 0.0 {
            return Err(Error::Index(format!(
                "target {t} at row {i} is not a class in 0..{classes}"
            )));
        }
    }
    let onehot = Variable::constant(targets.one_hot(classes, log_probs.tensor().dtype())?);
    let total = log_probs.mul(&onehot)?.sum_all()?.neg()?;
    match reduction {
        Reduction::Sum => Ok(total),
        Reduction::Mean => total.mul_scalar(1.0 / n.max(1) as f64),
    }
}

/// Squared error between `predictions` and `targets`.
pub fn mse(predictions: &Variable, targets: &Tensor, reduction: Reduction) -> Result<Variable> {
    if predictions.shape() != *targets.shape() {
        return Err(Error::shape(format!(
            "mse operands differ: {:?} vs {:?}",
            predictions.dims(),
            targets.dims()
        )));
    }
    let diff = predictions.sub(&Variable::constant(targets.astype(predictions.tensor().dtype())?))?;
    let sq = diff.mul(&diff)?;
    match reduction {
        Reduction::Sum => sq.sum_all(),
        Reduction::Mean => sq.mean(None, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::DType;

    #[test]
    fn uniform_log_probs_give_log_c() {
        let lp = Tensor::full(&[3, 4], DType::F64, -(4f64.ln())).unwrap();
        let t = Tensor::from_vec(vec![0i64, 3, 2], &[3]).unwrap();
        let l = categorical_cross_entropy(&Variable::constant(lp), &t, Reduction::Mean).unwrap();
        assert!((l.tensor().item().unwrap() - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn sum_reduction_scales_with_batch() {
        let lp = Tensor::from_vec(vec![-0.5, -1.0, -2.0, -0.25], &[2, 2]).unwrap();
        let t = Tensor::from_vec(vec![1i64, 0], &[2]).unwrap();
        let l = categorical_cross_entropy(&Variable::constant(lp), &t, Reduction::Sum).unwrap();
        assert_eq!(l.tensor().item().unwrap(), 3.0);
    }

    #[test]
    fn out_of_range_target_is_index_error() {
        let lp = Variable::constant(Tensor::zeros(&[1, 3], DType::F32).unwrap());
        let t = Tensor::from_vec(vec![3i64], &[1]).unwrap();
        assert!(matches!(
            categorical_cross_entropy(&lp, &t, Reduction::Mean),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let x = Tensor::from_vec(vec![1.0f32, -2.0, 7.5], &[3]).unwrap();
        let l = mse(&Variable::constant(x.clone()), &x, Reduction::Mean).unwrap();
        assert_eq!(l.tensor().item().unwrap(), 0.0);
        let y = Tensor::from_vec(vec![0.0f32, 0.0, 1.5], &[3]).unwrap();
        let s = mse(&Variable::constant(x), &y, Reduction::Sum).unwrap();
        assert_eq!(s.tensor().item().unwrap(), 1.0 + 4.0 + 36.0);
    }
}
