//! The user-facing tensor handle.
//!
//! A [`Tensor`] pairs a backend-owned adapter with the backend that
//! produced it. All operators are methods that build an [`Op`] and go
//! through [`crate::backend::dispatch`].

mod derived;
mod ops;

use std::fmt;
use std::sync::Arc;

use crate::backend::{self, BackendRef, TensorAdapter};
use crate::dtype::{DType, Element};
use crate::error::{Error, Result};
use crate::op::{HostBuffer, Op};
use crate::shape::Shape;

/// Immutable handle to a value on some backend. Cloning is cheap.
#[derive(Clone)]
pub struct Tensor {
    adapter: Arc<dyn TensorAdapter>,
    backend: BackendRef,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({} {} on {})", self.shape(), self.dtype(), self.backend.id())
    }
}

impl Tensor {
    pub(crate) fn from_parts(adapter: Arc<dyn TensorAdapter>, backend: BackendRef) -> Self {
        Tensor { adapter, backend }
    }

    pub fn adapter(&self) -> &Arc<dyn TensorAdapter> {
        &self.adapter
    }

    pub fn backend(&self) -> &BackendRef {
        &self.backend
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn shape(&self) -> &Shape {
        self.adapter.shape()
    }

    pub fn dims(&self) -> &[usize] {
        self.shape().dims()
    }

    pub fn rank(&self) -> usize {
        self.shape().rank()
    }

    pub fn numel(&self) -> usize {
        self.shape().numel()
    }

    pub fn dtype(&self) -> DType {
        self.adapter.dtype()
    }

    /// Row-major host copy; materializes lazy values.
    pub fn to_host(&self) -> Result<HostBuffer> {
        self.adapter.to_host()
    }

    /// Forces a lazy value without copying it out.
    pub fn eval(&self) -> Result<()> {
        self.adapter.materialize()
    }

    /// Values converted to `T`.
    pub fn to_vec<T: Element>(&self) -> Result<Vec<T>> {
        let host = self.to_host()?;
        let cast = host.data.cast(T::DTYPE);
        Ok(T::slice(&cast).expect("cast to own dtype").to_vec())
    }

    pub fn to_f64_vec(&self) -> Result<Vec<f64>> {
        Ok(self.to_host()?.data.to_f64_vec())
    }

    /// The single value of a one-element tensor.
    pub fn scalar<T: Element>(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::shape(format!("scalar() on tensor of shape {}", self.shape())));
        }
        Ok(self.to_vec::<T>()?[0])
    }

    pub fn item(&self) -> Result<f64> {
        self.scalar::<f64>()
    }

    /// Copies the value onto another backend.
    pub fn to_backend(&self, target: &BackendRef) -> Result<Tensor> {
        if target.id() == self.backend.id() {
            return Ok(self.clone());
        }
        Factory::new(target.clone()).from_host(self.to_host()?)
    }

    /// Creation functions on this tensor's backend.
    pub fn factory(&self) -> Factory {
        Factory::new(self.backend.clone())
    }

    pub fn full_like(&self, value: f64) -> Result<Tensor> {
        self.factory().full(self.dims(), self.dtype(), value)
    }

    pub fn zeros_like(&self) -> Result<Tensor> {
        self.full_like(0.0)
    }

    pub fn ones_like(&self) -> Result<Tensor> {
        self.full_like(1.0)
    }

    /// Creation functions on an explicit backend.
    pub fn on(backend: &BackendRef) -> Factory {
        Factory::new(backend.clone())
    }

    pub fn full(dims: &[usize], dtype: DType, value: f64) -> Result<Tensor> {
        Factory::default().full(dims, dtype, value)
    }

    pub fn zeros(dims: &[usize], dtype: DType) -> Result<Tensor> {
        Factory::default().full(dims, dtype, 0.0)
    }

    pub fn ones(dims: &[usize], dtype: DType) -> Result<Tensor> {
        Factory::default().full(dims, dtype, 1.0)
    }

    /// Rank-0 tensor holding `value`.
    pub fn scalar_value(value: f64, dtype: DType) -> Result<Tensor> {
        Factory::default().full(&[], dtype, value)
    }

    pub fn identity(n: usize, dtype: DType) -> Result<Tensor> {
        Factory::default().identity(n, dtype)
    }

    pub fn arange(len: usize, dtype: DType) -> Result<Tensor> {
        Factory::default().arange(len, dtype)
    }

    pub fn rand_uniform(dims: &[usize], dtype: DType, low: f64, high: f64) -> Result<Tensor> {
        Factory::default().rand_uniform(dims, dtype, low, high)
    }

    pub fn rand_normal(dims: &[usize], dtype: DType, mean: f64, std: f64) -> Result<Tensor> {
        Factory::default().rand_normal(dims, dtype, mean, std)
    }

    pub fn from_vec<T: Element>(data: Vec<T>, dims: &[usize]) -> Result<Tensor> {
        Factory::default().from_vec(data, dims)
    }

    pub fn from_host(host: HostBuffer) -> Result<Tensor> {
        Factory::default().from_host(host)
    }
}

/// Tensor creation bound to one backend.
#[derive(Debug, Clone)]
pub struct Factory {
    backend: BackendRef,
}

impl Default for Factory {
    fn default() -> Self {
        Factory::new(backend::default_backend())
    }
}

impl Factory {
    pub fn new(backend: BackendRef) -> Self {
        Factory { backend }
    }

    pub fn backend(&self) -> &BackendRef {
        &self.backend
    }

    fn create(&self, op: Op) -> Result<Tensor> {
        backend::dispatch(&self.backend, op, &[])
    }

    pub fn full(&self, dims: &[usize], dtype: DType, value: f64) -> Result<Tensor> {
        self.create(Op::Full {
            shape: Shape::new(dims)?,
            dtype,
            value,
        })
    }

    pub fn zeros(&self, dims: &[usize], dtype: DType) -> Result<Tensor> {
        self.full(dims, dtype, 0.0)
    }

    pub fn ones(&self, dims: &[usize], dtype: DType) -> Result<Tensor> {
        self.full(dims, dtype, 1.0)
    }

    pub fn identity(&self, n: usize, dtype: DType) -> Result<Tensor> {
        self.create(Op::Identity { n, dtype })
    }

    pub fn arange(&self, len: usize, dtype: DType) -> Result<Tensor> {
        self.create(Op::Arange { len, dtype })
    }

    pub fn rand_uniform(&self, dims: &[usize], dtype: DType, low: f64, high: f64) -> Result<Tensor> {
        self.create(Op::RandUniform {
            shape: Shape::new(dims)?,
            dtype,
            low,
            high,
            seed: self.backend.next_seed(),
        })
    }

    pub fn rand_normal(&self, dims: &[usize], dtype: DType, mean: f64, std: f64) -> Result<Tensor> {
        self.create(Op::RandNormal {
            shape: Shape::new(dims)?,
            dtype,
            mean,
            std,
            seed: self.backend.next_seed(),
        })
    }

    pub fn from_vec<T: Element>(&self, data: Vec<T>, dims: &[usize]) -> Result<Tensor> {
        self.from_host(HostBuffer::new(Shape::new(dims)?, T::into_buffer(data))?)
    }

    pub fn from_host(&self, host: HostBuffer) -> Result<Tensor> {
        self.create(Op::FromHost(Arc::new(host)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn creation_examples() {
        let t = Tensor::full(&[2, 2], DType::F32, 3.0).unwrap();
        assert_eq!(t.to_vec::<f32>().unwrap(), vec![3.0; 4]);
        assert_eq!(
            Tensor::arange(5, DType::I32).unwrap().to_vec::<i32>().unwrap(),
            vec![0, 1, 2, 3, 4]
        );
        let s = Tensor::scalar_value(2.5, DType::F64).unwrap();
        assert_eq!((s.rank(), s.item().unwrap()), (0, 2.5));
        assert!(matches!(Tensor::zeros(&[1; 9], DType::F32), Err(Error::Shape(_))));
    }

    #[test]
    fn empty_tensor_has_no_elements() {
        let t = Tensor::zeros(&[3, 0], DType::F32).unwrap();
        assert_eq!(t.numel(), 0);
        assert!(t.to_vec::<f32>().unwrap().is_empty());
    }

    #[test]
    fn host_export_is_idempotent() {
        let t = Tensor::rand_uniform(&[17], DType::F32, -1.0, 1.0).unwrap();
        assert_eq!(t.to_host().unwrap().bytes(), t.to_host().unwrap().bytes());
    }
}
