use std::sync::{Arc, LazyLock};

use super::Variable;
use crate::error::Result;
use crate::tensor::Tensor;

type Forward = dyn Fn(&[Tensor]) -> Result<Tensor> + Send + Sync;
/// `(inputs, output, output_grad) -> input grads`.
type Backward = dyn Fn(&[Tensor], &Tensor, &Tensor) -> Result<Vec<Option<Tensor>>> + Send + Sync;

/// A user-defined differentiable operator: a forward function on tensors
/// plus its vector-Jacobian product.
///
/// ```
/// use kindling::autograd::{CustomOp, Variable};
/// use kindling::{DType, Tensor};
///
/// let square = CustomOp::new(
///     "square",
///     |x| x[0].mul(&x[0]),
///     |x, _y, g| Ok(vec![Some(g.mul(&x[0])?.mul_scalar(2.0)?)]),
/// );
/// let v = Variable::new(Tensor::scalar_value(3.0, DType::F64)?, true);
/// square.apply(&[&v])?.backward(None, false)?;
/// assert_eq!(v.grad().unwrap().item()?, 6.0);
/// # Ok::<(), kindling::Error>(())
/// ```
#[derive(Clone)]
pub struct CustomOp {
    name: &'static str,
    forward: Arc<Forward>,
    backward: Arc<Backward>,
}

impl CustomOp {
    pub fn new(
        name: &'static str,
        forward: impl Fn(&[Tensor]) -> Result<Tensor> + Send + Sync + 'static,
        backward: impl Fn(&[Tensor], &Tensor, &Tensor) -> Result<Vec<Option<Tensor>>> + Send + Sync + 'static,
    ) -> Self {
        CustomOp {
            name,
            forward: Arc::new(forward),
            backward: Arc::new(backward),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn apply(&self, inputs: &[&Variable]) -> Result<Variable> {
        let tensors: Vec<Tensor> = inputs.iter().map(|v| v.tensor()).collect();
        let out = (self.forward)(&tensors)?;
        let y = out.clone();
        let backward = self.backward.clone();
        Ok(Variable::record(out, self.name, inputs, move |g| {
            backward(&tensors, &y, g)
        }))
    }
}

pub(super) static COS: LazyLock<CustomOp> = LazyLock::new(|| {
    CustomOp::new(
        "cos",
        |x| x[0].cos(),
        |x, _y, g| Ok(vec![Some(g.mul(&x[0].sin()?)?.neg()?)]),
    )
});
