use super::{no_grad, Variable};
use crate::dtype::DType;
use crate::error::Result;
use crate::kernels::uniform_at;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1)`.
    pub max_relative_error: f64,
    pub elements_checked: usize,
    /// `(input, element, analytic, numeric)` at the largest error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares autograd gradients of `f` against central finite differences.
///
/// Non-scalar outputs are reduced to a scalar by a fixed random projection
/// so every output element contributes. Inputs should be f64.
pub fn gradcheck(f: impl Fn(&[Variable]) -> Result<Variable>, inputs: &[Tensor], eps: f64) -> Result<GradcheckReport> {
    let vars: Vec<Variable> = inputs.iter().map(|t| Variable::new(t.clone(), true)).collect();
    let y = f(&vars)?;
    let weights = projection(&y.tensor())?;
    let loss = y.mul(&Variable::constant(weights.clone()))?.sum_all()?;
    loss.backward(None, false)?;

    let project = |ts: &[Tensor]| -> Result<f64> {
        no_grad(|| {
            let vs: Vec<Variable> = ts.iter().map(|t| Variable::constant(t.clone())).collect();
            f(&vs)?.tensor().astype(DType::F64)?.mul(&weights)?.sum_all()?.item()
        })
    };

    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        elements_checked: 0,
        worst: None,
    };
    for (k, input) in inputs.iter().enumerate() {
        let analytic = match vars[k].grad() {
            Some(g) => g.to_f64_vec()?,
            None => vec![0.0; input.numel()],
        };
        let base = input.to_f64_vec()?;
        for i in 0..base.len() {
            let mut shifted: Vec<Tensor> = inputs.to_vec();
            let mut probe = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[i] += delta;
                shifted[k] = input.factory().from_vec(v, input.dims())?.astype(input.dtype())?;
                project(&shifted)
            };
            let numeric = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            report.elements_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((k, i, a, numeric));
            }
        }
    }
    Ok(report)
}

fn projection(y: &Tensor) -> Result<Tensor> {
    let w: Vec<f64> = (0..y.numel() as u64)
        .map(|i| 0.5 + uniform_at(0x6772_6164, i))
        .collect();
    y.factory().from_vec(w, y.dims())
}
