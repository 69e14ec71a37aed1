//! Differentiable operations on [`Variable`]s.

use super::custom::COS;
use super::Variable;
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::op::Window;
use crate::shape::Shape;
use crate::tensor::Tensor;

fn mask(cond: &Tensor, like: &Tensor) -> Result<Tensor> {
    cond.astype(like.dtype())
}

impl Variable {
    pub fn add(&self, other: &Variable) -> Result<Variable> {
        let (sa, sb) = (self.shape(), other.shape());
        let out = self.tensor().add(&other.tensor())?;
        Ok(Variable::record(out, "add", &[self, other], move |g| {
            Ok(vec![Some(g.sum_to_shape(&sa)?), Some(g.sum_to_shape(&sb)?)])
        }))
    }

    pub fn sub(&self, other: &Variable) -> Result<Variable> {
        let (sa, sb) = (self.shape(), other.shape());
        let out = self.tensor().sub(&other.tensor())?;
        Ok(Variable::record(out, "sub", &[self, other], move |g| {
            Ok(vec![Some(g.sum_to_shape(&sa)?), Some(g.neg()?.sum_to_shape(&sb)?)])
        }))
    }

    pub fn mul(&self, other: &Variable) -> Result<Variable> {
        let (a, b) = (self.tensor(), other.tensor());
        let out = a.mul(&b)?;
        Ok(Variable::record(out, "mul", &[self, other], move |g| {
            Ok(vec![
                Some(g.mul(&b)?.sum_to_shape(a.shape())?),
                Some(g.mul(&a)?.sum_to_shape(b.shape())?),
            ])
        }))
    }

    pub fn div(&self, other: &Variable) -> Result<Variable> {
        let (a, b) = (self.tensor(), other.tensor());
        let out = a.div(&b)?;
        let y = out.clone();
        Ok(Variable::record(out, "div", &[self, other], move |g| {
            let ga = g.div(&b)?;
            let gb = ga.mul(&y)?.neg()?;
            Ok(vec![
                Some(ga.sum_to_shape(a.shape())?),
                Some(gb.sum_to_shape(b.shape())?),
            ])
        }))
    }

    /// Elementwise maximum; on ties the gradient goes to `self`.
    pub fn maximum(&self, other: &Variable) -> Result<Variable> {
        let (a, b) = (self.tensor(), other.tensor());
        let out = a.maximum(&b)?;
        Ok(Variable::record(out, "maximum", &[self, other], move |g| {
            let to_b = b.gt(&a)?;
            let ga = g.mul(&mask(&to_b.logical_not()?, g)?)?;
            let gb = g.mul(&mask(&to_b, g)?)?;
            Ok(vec![
                Some(ga.sum_to_shape(a.shape())?),
                Some(gb.sum_to_shape(b.shape())?),
            ])
        }))
    }

    /// Elementwise minimum; on ties the gradient goes to `self`.
    pub fn minimum(&self, other: &Variable) -> Result<Variable> {
        let (a, b) = (self.tensor(), other.tensor());
        let out = a.minimum(&b)?;
        Ok(Variable::record(out, "minimum", &[self, other], move |g| {
            let to_b = b.lt(&a)?;
            let ga = g.mul(&mask(&to_b.logical_not()?, g)?)?;
            let gb = g.mul(&mask(&to_b, g)?)?;
            Ok(vec![
                Some(ga.sum_to_shape(a.shape())?),
                Some(gb.sum_to_shape(b.shape())?),
            ])
        }))
    }

    pub fn add_scalar(&self, s: f64) -> Result<Variable> {
        let out = self.tensor().add_scalar(s)?;
        Ok(Variable::record(out, "add", &[self], |g| Ok(vec![Some(g.clone())])))
    }

    pub fn mul_scalar(&self, s: f64) -> Result<Variable> {
        let out = self.tensor().mul_scalar(s)?;
        Ok(Variable::record(out, "mul", &[self], move |g| {
            Ok(vec![Some(g.mul_scalar(s)?)])
        }))
    }

    pub fn pow_scalar(&self, p: f64) -> Result<Variable> {
        let x = self.tensor();
        let out = x.pow_scalar(p)?;
        Ok(Variable::record(out, "pow", &[self], move |g| {
            Ok(vec![Some(g.mul(&x.pow_scalar(p - 1.0)?.mul_scalar(p)?)?)])
        }))
    }

    pub fn neg(&self) -> Result<Variable> {
        let out = self.tensor().neg()?;
        Ok(Variable::record(out, "neg", &[self], |g| Ok(vec![Some(g.neg()?)])))
    }

    pub fn abs(&self) -> Result<Variable> {
        let x = self.tensor();
        let out = x.abs()?;
        Ok(Variable::record(out, "abs", &[self], move |g| {
            let sign = mask(&x.gt_scalar(0.0)?, g)?.sub(&mask(&x.lt_scalar(0.0)?, g)?)?;
            Ok(vec![Some(g.mul(&sign)?)])
        }))
    }

    pub fn exp(&self) -> Result<Variable> {
        let out = self.tensor().exp()?;
        let y = out.clone();
        Ok(Variable::record(out, "exp", &[self], move |g| {
            Ok(vec![Some(g.mul(&y)?)])
        }))
    }

    pub fn log(&self) -> Result<Variable> {
        let x = self.tensor();
        let out = x.log()?;
        Ok(Variable::record(out, "log", &[self], move |g| {
            Ok(vec![Some(g.div(&x)?)])
        }))
    }

    pub fn sqrt(&self) -> Result<Variable> {
        let out = self.tensor().sqrt()?;
        let y = out.clone();
        Ok(Variable::record(out, "sqrt", &[self], move |g| {
            Ok(vec![Some(g.div(&y)?.mul_scalar(0.5)?)])
        }))
    }

    pub fn sin(&self) -> Result<Variable> {
        let x = self.tensor();
        let out = x.sin()?;
        Ok(Variable::record(out, "sin", &[self], move |g| {
            Ok(vec![Some(g.mul(&x.cos()?)?)])
        }))
    }

    /// Cosine, defined through the custom-operator API.
    pub fn cos(&self) -> Result<Variable> {
        COS.apply(&[self])
    }

    pub fn tanh(&self) -> Result<Variable> {
        let out = self.tensor().tanh()?;
        let y = out.clone();
        Ok(Variable::record(out, "tanh", &[self], move |g| {
            Ok(vec![Some(g.mul(&y.mul(&y)?.rsub_scalar(1.0)?)?)])
        }))
    }

    pub fn sigmoid(&self) -> Result<Variable> {
        let out = self.tensor().sigmoid()?;
        let y = out.clone();
        Ok(Variable::record(out, "sigmoid", &[self], move |g| {
            Ok(vec![Some(g.mul(&y.mul(&y.rsub_scalar(1.0)?)?)?)])
        }))
    }

    pub fn relu(&self) -> Result<Variable> {
        let x = self.tensor();
        let out = x.relu()?;
        Ok(Variable::record(out, "maximum", &[self], move |g| {
            Ok(vec![Some(g.mul(&mask(&x.gt_scalar(0.0)?, g)?)?)])
        }))
    }

    pub fn gelu(&self) -> Result<Variable> {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        let cube = self.mul(self)?.mul(self)?;
        let inner = self.add(&cube.mul_scalar(0.044715)?)?.mul_scalar(c)?;
        self.mul(&inner.tanh()?.add_scalar(1.0)?)?.mul_scalar(0.5)
    }

    /// `where(cond, self, other)`; `cond` carries no gradient.
    pub fn select(cond: &Tensor, a: &Variable, b: &Variable) -> Result<Variable> {
        let (sa, sb) = (a.shape(), b.shape());
        let c = cond.clone();
        let out = Tensor::select(cond, &a.tensor(), &b.tensor())?;
        Ok(Variable::record(out, "where", &[a, b], move |g| {
            let zero = g.zeros_like()?;
            Ok(vec![
                Some(Tensor::select(&c, g, &zero)?.sum_to_shape(&sa)?),
                Some(Tensor::select(&c, &zero, g)?.sum_to_shape(&sb)?),
            ])
        }))
    }

    pub fn sum(&self, axis: Option<usize>, keep_dims: bool) -> Result<Variable> {
        let x = self.tensor();
        let out = x.sum(axis, keep_dims)?;
        let shape = x.shape().clone();
        Ok(Variable::record(out, "sum", &[self], move |g| {
            Ok(vec![Some(g.reshape(&kept_dims(&shape, axis))?.broadcast_to(&shape)?)])
        }))
    }

    pub fn sum_all(&self) -> Result<Variable> {
        self.sum(None, false)
    }

    pub fn mean(&self, axis: Option<usize>, keep_dims: bool) -> Result<Variable> {
        let count = match axis {
            Some(a) => self.shape().dim(a)?,
            None => self.shape().numel(),
        };
        self.sum(axis, keep_dims)?.mul_scalar(1.0 / count as f64)
    }

    /// Population variance, composed from differentiable ops.
    pub fn var(&self, axis: Option<usize>, keep_dims: bool) -> Result<Variable> {
        let d = self.sub(&self.mean(axis, true)?)?;
        d.mul(&d)?.mean(axis, keep_dims)
    }

    /// Max along `axis`; on ties the lowest index receives the gradient.
    pub fn max(&self, axis: Option<usize>, keep_dims: bool) -> Result<Variable> {
        let x = self.tensor();
        let out = x.max(axis, keep_dims)?;
        Ok(Variable::record(out, "max", &[self], move |g| {
            let dims = kept_dims(x.shape(), axis);
            let hit = mask(&first_max(&x, axis)?, g)?;
            Ok(vec![Some(hit.mul(&g.reshape(&dims)?)?)])
        }))
    }

    pub fn argmax(&self, axis: usize) -> Result<Variable> {
        Ok(Variable::constant(self.tensor().argmax(axis, false)?))
    }

    pub fn matmul(&self, other: &Variable) -> Result<Variable> {
        let (a, b) = (self.tensor(), other.tensor());
        let out = a.matmul(&b)?;
        Ok(Variable::record(out, "matmul", &[self, other], move |g| {
            Ok(vec![Some(g.matmul(&b.transpose()?)?), Some(a.transpose()?.matmul(g)?)])
        }))
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Variable> {
        let x = self.tensor();
        let orig = x.dims().to_vec();
        let out = x.reshape(dims)?;
        Ok(Variable::record(out, "reshape", &[self], move |g| {
            Ok(vec![Some(g.reshape(&orig)?)])
        }))
    }

    pub fn flatten_batch(&self) -> Result<Variable> {
        let d = self.dims();
        let n = *d.first().ok_or_else(|| Error::shape("flatten of a scalar"))?;
        self.reshape(&[n, d[1..].iter().product()])
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Variable> {
        let out = self.tensor().permute(perm)?;
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(Variable::record(out, "transpose", &[self], move |g| {
            Ok(vec![Some(g.permute(&inverse)?)])
        }))
    }

    pub fn transpose(&self) -> Result<Variable> {
        let r = self.shape().rank();
        if r < 2 {
            return Err(Error::shape("transpose needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn slice(&self, ranges: &[(usize, usize)]) -> Result<Variable> {
        let x = self.tensor();
        let out = x.slice(ranges)?;
        let widths: Vec<(usize, usize)> = ranges.iter().zip(x.dims()).map(|(&(a, b), &d)| (a, d - b)).collect();
        Ok(Variable::record(out, "slice", &[self], move |g| {
            Ok(vec![Some(g.pad(&widths, 0.0)?)])
        }))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Variable> {
        let dims = self.dims();
        self.shape().check_axis(axis)?;
        let ranges: Vec<(usize, usize)> = dims
            .iter()
            .enumerate()
            .map(|(i, &d)| if i == axis { (start, start + len) } else { (0, d) })
            .collect();
        self.slice(&ranges)
    }

    pub fn pad(&self, widths: &[(usize, usize)], value: f64) -> Result<Variable> {
        let x = self.tensor();
        let out = x.pad(widths, value)?;
        let ranges: Vec<(usize, usize)> = widths.iter().zip(x.dims()).map(|(&(a, _), &d)| (a, a + d)).collect();
        Ok(Variable::record(out, "pad", &[self], move |g| {
            Ok(vec![Some(g.slice(&ranges)?)])
        }))
    }

    pub fn concat(vars: &[&Variable], axis: usize) -> Result<Variable> {
        let tensors: Vec<Tensor> = vars.iter().map(|v| v.tensor()).collect();
        let extents: Vec<usize> = tensors.iter().map(|t| t.shape().dim(axis)).collect::<Result<_>>()?;
        let out = Tensor::concat(&tensors.iter().collect::<Vec<_>>(), axis)?;
        Ok(Variable::record(out, "concat", vars, move |g| {
            let mut start = 0;
            extents
                .iter()
                .map(|&e| {
                    let piece = g.narrow(axis, start, e);
                    start += e;
                    piece.map(Some)
                })
                .collect()
        }))
    }

    pub fn unfold(&self, window: Window) -> Result<Variable> {
        let x = self.tensor();
        let (h, w) = (x.dims()[2], x.dims()[3]);
        let out = x.unfold(window)?;
        Ok(Variable::record(out, "unfold", &[self], move |g| {
            Ok(vec![Some(g.fold(window, h, w)?)])
        }))
    }

    pub fn fold(&self, window: Window, height: usize, width: usize) -> Result<Variable> {
        let out = self.tensor().fold(window, height, width)?;
        Ok(Variable::record(out, "fold", &[self], move |g| {
            Ok(vec![Some(g.unfold(window)?)])
        }))
    }

    /// Convolution composed from differentiable unfold, reshape and matmul.
    pub fn conv2d(
        &self,
        weight: &Variable,
        bias: Option<&Variable>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Variable> {
        let (x, w) = (self.dims(), weight.dims());
        if x.len() != 4 || w.len() != 4 || x[1] != w[1] {
            return Err(Error::shape(format!(
                "conv2d input {x:?} incompatible with weight {w:?}"
            )));
        }
        let (n, f, k) = (x[0], w[0], w[1] * w[2] * w[3]);
        let window = Window::new((w[2], w[3]), stride, padding);
        let (ho, wo) = window.output_hw(x[2], x[3])?;
        let cols = self.unfold(window)?.permute(&[1, 0, 2])?.reshape(&[k, n * ho * wo])?;
        let out = weight
            .reshape(&[f, k])?
            .matmul(&cols)?
            .reshape(&[f, n, ho, wo])?
            .permute(&[1, 0, 2, 3])?;
        match bias {
            Some(b) => out.add(&b.reshape(&[1, f, 1, 1])?),
            None => Ok(out),
        }
    }

    pub fn max_pool2d(
        &self,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Variable> {
        let d = self.dims();
        if d.len() != 4 {
            return Err(Error::shape(format!("max_pool2d expects [N,C,H,W], got {d:?}")));
        }
        let window = Window::new(kernel, stride, padding);
        let (ho, wo) = window.output_hw(d[2], d[3])?;
        let padded = if padding == (0, 0) {
            self.clone()
        } else {
            self.pad(
                &[(0, 0), (0, 0), (padding.0, padding.0), (padding.1, padding.1)],
                f64::NEG_INFINITY,
            )?
        };
        padded
            .unfold(Window::new(kernel, stride, (0, 0)))?
            .reshape(&[d[0], d[1], kernel.0 * kernel.1, ho * wo])?
            .max(Some(2), false)?
            .reshape(&[d[0], d[1], ho, wo])
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Variable> {
        let m = Variable::constant(self.tensor().max(Some(axis), true)?);
        let z = self.sub(&m)?;
        z.sub(&z.exp()?.sum(Some(axis), true)?.log()?)
    }

    pub fn softmax(&self, axis: usize) -> Result<Variable> {
        let m = Variable::constant(self.tensor().max(Some(axis), true)?);
        let e = self.sub(&m)?.exp()?;
        e.div(&e.sum(Some(axis), true)?)
    }

    pub fn astype(&self, dtype: DType) -> Result<Variable> {
        let from = self.tensor().dtype();
        let out = self.tensor().astype(dtype)?;
        Ok(Variable::record(out, "astype", &[self], move |g| {
            Ok(vec![Some(g.astype(from)?)])
        }))
    }
}

/// Boolean mask selecting the first maximal element of each reduced lane.
fn first_max(x: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    match axis {
        Some(a) => {
            let idx = x.argmax(a, true)?;
            let mut dims = vec![1; x.rank()];
            dims[a] = x.dims()[a];
            x.factory().arange(dims[a], idx.dtype())?.reshape(&dims)?.eq(&idx)
        }
        None => {
            let flat = x.reshape(&[x.numel()])?;
            let idx = flat.argmax(0, true)?;
            x.factory().arange(x.numel(), idx.dtype())?.eq(&idx)?.reshape(x.dims())
        }
    }
}

/// Shape of a reduction result with the reduced axes kept as extent 1.
fn kept_dims(shape: &Shape, axis: Option<usize>) -> Vec<usize> {
    match axis {
        Some(a) => {
            let mut d = shape.dims().to_vec();
            d[a] = 1;
            d
        }
        None => vec![1; shape.rank()],
    }
}
