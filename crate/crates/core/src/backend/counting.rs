use std::any::Any;
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::{Backend, BackendRef, TensorAdapter};
use crate::error::Result;
use crate::memory::MemoryPool;
use crate::op::Op;
use crate::tensor::Tensor;

/// Wraps another backend and counts every primitive it executes.
pub struct CountingBackend {
    id: String,
    inner: BackendRef,
    counts: Mutex<BTreeMap<&'static str, u64>>,
}

impl CountingBackend {
    pub fn new(id: impl Into<String>, inner: BackendRef) -> Self {
        CountingBackend {
            id: id.into(),
            inner,
            counts: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn count(&self, primitive: &str) -> u64 {
        self.lock().get(primitive).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> BTreeMap<&'static str, u64> {
        self.lock().clone()
    }

    pub fn total(&self) -> u64 {
        self.lock().values().sum()
    }

    pub fn reset(&self) {
        self.lock().clear();
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<&'static str, u64>> {
        self.counts.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Backend for CountingBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn execute(&self, op: &Op, inputs: &[&Tensor]) -> Result<Arc<dyn TensorAdapter>> {
        *self.lock().entry(op.primitive_name()).or_insert(0) += 1;
        self.inner.execute(op, inputs)
    }

    fn next_seed(&self) -> u64 {
        self.inner.next_seed()
    }

    fn set_seed(&self, seed: u64) {
        self.inner.set_seed(seed)
    }

    fn memory(&self) -> Option<&Arc<MemoryPool>> {
        self.inner.memory()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
