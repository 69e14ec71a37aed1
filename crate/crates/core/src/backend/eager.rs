//! Immediate-mode dense CPU backend.

use std::any::Any;
use std::fmt;
use std::sync::{Arc, Mutex};

use super::{adapters, Backend, TensorAdapter};
use crate::dtype::{Buffer, DType};
use crate::error::Result;
use crate::kernels;
use crate::memory::{Allocation, BlockId, MemoryPool};
use crate::op::{HostBuffer, Op};
use crate::shape::Shape;
use crate::tensor::Tensor;

/// A row-major payload tied to the allocation that accounts for it.
pub struct DenseStorage {
    buffer: Buffer,
    allocation: Allocation,
}

impl DenseStorage {
    pub(crate) fn allocate(pool: &Arc<MemoryPool>, op: &str, buffer: Buffer) -> Result<Arc<Self>> {
        let allocation = pool.allocate(buffer.byte_len(), op)?;
        Ok(Arc::new(DenseStorage { buffer, allocation }))
    }

    pub fn buffer(&self) -> &Buffer {
        &self.buffer
    }

    /// Id of the memory-manager block backing this buffer.
    pub fn alloc_id(&self) -> Option<BlockId> {
        self.allocation.block().map(|b| b.block_id)
    }
}

impl fmt::Debug for DenseStorage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseStorage")
            .field("dtype", &self.buffer.dtype())
            .field("len", &self.buffer.len())
            .field("alloc_id", &self.alloc_id())
            .finish()
    }
}

#[derive(Debug)]
pub struct EagerAdapter {
    shape: Shape,
    storage: Arc<DenseStorage>,
}

impl EagerAdapter {
    pub fn storage(&self) -> &Arc<DenseStorage> {
        &self.storage
    }
}

impl TensorAdapter for EagerAdapter {
    fn shape(&self) -> &Shape {
        &self.shape
    }

    fn dtype(&self) -> DType {
        self.storage.buffer.dtype()
    }

    fn to_host(&self) -> Result<HostBuffer> {
        Ok(HostBuffer {
            shape: self.shape.clone(),
            data: self.storage.buffer.clone(),
        })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub struct EagerBackend {
    id: String,
    pool: Arc<MemoryPool>,
    rng: Mutex<u64>,
}

impl EagerBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self::with_pool(id, MemoryPool::native())
    }

    pub fn with_pool(id: impl Into<String>, pool: Arc<MemoryPool>) -> Self {
        EagerBackend {
            id: id.into(),
            pool,
            rng: Mutex::new(0),
        }
    }
}

impl Backend for EagerBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn execute(&self, op: &Op, inputs: &[&Tensor]) -> Result<Arc<dyn TensorAdapter>> {
        let ins: Vec<&EagerAdapter> = adapters(&self.id, inputs)?;
        let metas: Vec<(&Shape, DType)> = ins.iter().map(|a| (&a.shape, a.dtype())).collect();
        let (shape, dtype) = op.infer(&metas)?;
        if let Op::Reshape(_) = op {
            return Ok(Arc::new(EagerAdapter {
                shape,
                storage: ins[0].storage.clone(),
            }));
        }
        let dense: Vec<(&Shape, &Buffer)> = ins.iter().map(|a| (&a.shape, &a.storage.buffer)).collect();
        let buffer = kernels::compute(op, &dense, &shape, dtype)?;
        let storage = DenseStorage::allocate(&self.pool, op.primitive_name(), buffer)?;
        Ok(Arc::new(EagerAdapter { shape, storage }))
    }

    fn next_seed(&self) -> u64 {
        kernels::next_seed(&mut self.rng.lock().unwrap_or_else(|e| e.into_inner()))
    }

    fn set_seed(&self, seed: u64) {
        *self.rng.lock().unwrap_or_else(|e| e.into_inner()) = seed;
    }

    fn memory(&self) -> Option<&Arc<MemoryPool>> {
        Some(&self.pool)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
