//! Operators composed purely from primitives.

use super::Tensor;
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::op::Window;

impl Tensor {
    pub fn relu(&self) -> Result<Tensor> {
        self.maximum_scalar(0.0)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let m = self.max(Some(axis), true)?;
        let e = self.sub(&m)?.exp()?;
        e.div(&e.sum(Some(axis), true)?)
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let m = self.max(Some(axis), true)?;
        let z = self.sub(&m)?;
        z.sub(&z.exp()?.sum(Some(axis), true)?.log()?)
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&self) -> Result<Tensor> {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        let cube = self.mul(self)?.mul(self)?;
        let inner = self.add(&cube.mul_scalar(0.044715)?)?.mul_scalar(c)?;
        self.mul(&inner.tanh()?.add_scalar(1.0)?)?.mul_scalar(0.5)
    }

    /// Cross-correlation of `[N,C,H,W]` with `[F,C,kh,kw]` via unfold + matmul.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Tensor> {
        let (x, w) = (self.dims(), weight.dims());
        if x.len() != 4 || w.len() != 4 || x[1] != w[1] {
            return Err(Error::shape(format!(
                "conv2d input {} incompatible with weight {}",
                self.shape(),
                weight.shape()
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
            Some(b) => {
                if b.dims() != [f] {
                    return Err(Error::shape(format!("conv2d bias {} for {f} filters", b.shape())));
                }
                out.add(&b.reshape(&[1, f, 1, 1])?)
            }
            None => Ok(out),
        }
    }

    /// Max pooling over `[N,C,H,W]`; padding counts as negative infinity.
    pub fn max_pool2d(
        &self,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Tensor> {
        let d = self.dims();
        if d.len() != 4 {
            return Err(Error::shape(format!(
                "max_pool2d expects [N,C,H,W], got {}",
                self.shape()
            )));
        }
        let (n, c) = (d[0], d[1]);
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
            .reshape(&[n, c, kernel.0 * kernel.1, ho * wo])?
            .max(Some(2), false)?
            .reshape(&[n, c, ho, wo])
    }

    /// `[N]` integer labels to `[N, classes]` indicators.
    pub fn one_hot(&self, classes: usize, dtype: DType) -> Result<Tensor> {
        if self.rank() != 1 {
            return Err(Error::shape(format!("one_hot expects rank 1, got {}", self.shape())));
        }
        let ids = self.factory().arange(classes, self.dtype())?;
        self.reshape(&[self.numel(), 1])?.eq(&ids)?.astype(dtype)
    }
}
