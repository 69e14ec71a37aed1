//! A catalog of differentiable functions with input shapes, for checking
//! autograd against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{gradcheck, GradcheckReport, Variable};
use crate::dtype::DType;
use crate::error::Result;
use crate::nn::{self, Module, Reduction};
use crate::op::Window;
use crate::tensor::Tensor;

type CaseFn = Box<dyn Fn(&[Variable]) -> Result<Variable> + Send + Sync>;

pub struct GradCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    /// Inputs are drawn from `[0.5, 2)` instead of `[-2, 2)`.
    pub positive: bool,
    pub f: CaseFn,
}

impl GradCase {
    fn new(
        name: &'static str,
        shapes: &[&[usize]],
        f: impl Fn(&[Variable]) -> Result<Variable> + Send + Sync + 'static,
    ) -> Self {
        GradCase {
            name,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            positive: false,
            f: Box::new(f),
        }
    }

    fn positive(mut self) -> Self {
        self.positive = true;
        self
    }

    /// Random f64 inputs for instance `seed`.
    pub fn inputs(&self, seed: u64) -> Result<Vec<Tensor>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.shapes
            .iter()
            .map(|dims| {
                let n = dims.iter().product();
                let v: Vec<f64> = (0..n)
                    .map(|_| {
                        if self.positive {
                            rng.gen_range(0.5..2.0)
                        } else {
                            rng.gen_range(-2.0..2.0)
                        }
                    })
                    .collect();
                Tensor::from_vec(v, dims)
            })
            .collect()
    }

    pub fn check(&self, seed: u64, eps: f64) -> Result<GradcheckReport> {
        gradcheck(&self.f, &self.inputs(seed)?, eps)
    }
}

fn mask_like(dims: &[usize], ratio: f64) -> Result<Tensor> {
    nn::Dropout::new(ratio)?.mask(&Tensor::zeros(dims, DType::F64)?)
}

/// Every differentiable op, layer and loss.
pub fn gradient_cases() -> Result<Vec<GradCase>> {
    let m: &[usize] = &[3, 4];
    let dropout_mask = mask_like(&[4, 5], 0.4)?;
    let mse_target = Tensor::from_vec((0..12).map(|i| (i as f64 * 0.7).sin()).collect(), &[3, 4])?;
    let labels = Tensor::from_vec(vec![0i64, 2, 1, 2], &[4])?;
    let cases = vec![
        GradCase::new("add", &[m, &[4]], |v| v[0].add(&v[1])),
        GradCase::new("sub", &[m, &[3, 1]], |v| v[0].sub(&v[1])),
        GradCase::new("mul", &[m, m], |v| v[0].mul(&v[1])),
        GradCase::new("div", &[m, m], |v| v[0].div(&v[1])).positive(),
        GradCase::new("maximum", &[m, m], |v| v[0].maximum(&v[1])),
        GradCase::new("minimum", &[m, &[1, 4]], |v| v[0].minimum(&v[1])),
        GradCase::new("add_scalar", &[m], |v| v[0].add_scalar(1.5)),
        GradCase::new("mul_scalar", &[m], |v| v[0].mul_scalar(-2.5)),
        GradCase::new("pow_scalar", &[m], |v| v[0].pow_scalar(2.5)).positive(),
        GradCase::new("neg", &[m], |v| v[0].neg()),
        GradCase::new("abs", &[m], |v| v[0].abs()),
        GradCase::new("exp", &[m], |v| v[0].exp()),
        GradCase::new("log", &[m], |v| v[0].log()).positive(),
        GradCase::new("sqrt", &[m], |v| v[0].sqrt()).positive(),
        GradCase::new("sin", &[m], |v| v[0].sin()),
        GradCase::new("cos", &[m], |v| v[0].cos()),
        GradCase::new("tanh", &[m], |v| v[0].tanh()),
        GradCase::new("sigmoid", &[m], |v| v[0].sigmoid()),
        GradCase::new("relu", &[m], |v| v[0].relu()),
        GradCase::new("gelu", &[m], |v| v[0].gelu()),
        GradCase::new("select", &[m, m], |v| {
            let cond = v[0].tensor().gt_scalar(0.0)?;
            Variable::select(&cond, &v[0], &v[1])
        }),
        GradCase::new("sum", &[m], |v| v[0].sum(Some(1), false)),
        GradCase::new("sum_all", &[m], |v| v[0].sum_all()),
        GradCase::new("mean", &[m], |v| v[0].mean(Some(0), true)),
        GradCase::new("var", &[m], |v| v[0].var(Some(1), false)),
        GradCase::new("max", &[m], |v| v[0].max(Some(1), true)),
        GradCase::new("max_all", &[m], |v| v[0].max(None, false)),
        GradCase::new("matmul", &[m, &[4, 2]], |v| v[0].matmul(&v[1])),
        GradCase::new("batched_matmul", &[&[2, 3, 4], &[2, 4, 2]], |v| v[0].matmul(&v[1])),
        GradCase::new("reshape", &[m], |v| v[0].reshape(&[2, 6])),
        GradCase::new("flatten_batch", &[&[2, 3, 2]], |v| v[0].flatten_batch()),
        GradCase::new("permute", &[&[2, 3, 4]], |v| v[0].permute(&[2, 0, 1])),
        GradCase::new("transpose", &[m], |v| v[0].transpose()),
        GradCase::new("slice", &[m], |v| v[0].slice(&[(1, 3), (0, 3)])),
        GradCase::new("narrow", &[m], |v| v[0].narrow(1, 1, 2)),
        GradCase::new("pad", &[m], |v| v[0].pad(&[(1, 0), (2, 1)], 0.5)),
        GradCase::new("concat", &[&[2, 3], &[1, 3]], |v| Variable::concat(&[&v[0], &v[1]], 0)),
        GradCase::new("unfold", &[&[1, 2, 4, 4]], |v| {
            v[0].unfold(Window::new((2, 2), (1, 1), (1, 1)))
        }),
        GradCase::new("fold", &[&[1, 8, 4]], |v| {
            v[0].fold(Window::new((2, 2), (1, 1), (0, 0)), 3, 3)
        }),
        GradCase::new("conv2d", &[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]], |v| {
            v[0].conv2d(&v[1], Some(&v[2]), (2, 1), (1, 1))
        }),
        GradCase::new("max_pool2d", &[&[1, 2, 5, 5]], |v| {
            v[0].max_pool2d((3, 3), (2, 2), (1, 1))
        }),
        GradCase::new("log_softmax", &[m], |v| v[0].log_softmax(1)),
        GradCase::new("softmax", &[m], |v| v[0].softmax(0)),
        GradCase::new("astype", &[m], |v| v[0].astype(DType::F64)?.mul_scalar(2.0)),
        GradCase::new("Linear", &[&[4, 3], &[2, 3], &[2]], |v| {
            nn::Linear::from_params(v[1].clone(), Some(v[2].clone()))?.call(&v[0])
        }),
        GradCase::new("Conv2D", &[&[1, 2, 4, 4], &[2, 2, 2, 2], &[2]], |v| {
            nn::Conv2D::from_params(v[1].clone(), Some(v[2].clone()))?
                .padding((1, 0))
                .call(&v[0])
        }),
        GradCase::new("MaxPool2D", &[&[2, 1, 4, 4]], |v| nn::MaxPool2D::new(2).call(&v[0])),
        GradCase::new("ReLU", &[m], |v| nn::ReLU.call(&v[0])),
        GradCase::new("BatchNorm2d", &[&[2, 3, 2, 2], &[3], &[3]], |v| {
            nn::BatchNorm2d::from_params(v[1].clone(), v[2].clone())?.call(&v[0])
        }),
        GradCase::new("LogSoftmax", &[m], |v| nn::LogSoftmax::new(1).call(&v[0])),
        GradCase::new("View", &[&[2, 2, 3]], |v| nn::View::new(&[-1, 6])?.call(&v[0])),
        GradCase::new("Dropout", &[&[4, 5]], move |v| {
            v[0].mul(&Variable::constant(dropout_mask.clone()))
        }),
        GradCase::new("categorical_cross_entropy", &[&[4, 3]], move |v| {
            nn::categorical_cross_entropy(&v[0].log_softmax(1)?, &labels, Reduction::Mean)
        }),
        GradCase::new("mse", &[m], move |v| nn::mse(&v[0], &mse_target, Reduction::Sum)),
    ];
    Ok(cases)
}
