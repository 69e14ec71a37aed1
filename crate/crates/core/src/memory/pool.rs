use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use super::{AllocatorStats, MemoryBlock, MemoryManager, NativeAllocator};
use crate::error::{Error, Result};

/// Shared handle to the memory manager a backend allocates through.
pub struct MemoryPool {
    manager: Mutex<Box<dyn MemoryManager>>,
}

impl fmt::Debug for MemoryPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryPool").field("manager", &self.name()).finish()
    }
}

impl MemoryPool {
    pub fn new(manager: Box<dyn MemoryManager>) -> Arc<Self> {
        Arc::new(MemoryPool {
            manager: Mutex::new(manager),
        })
    }

    pub fn native() -> Arc<Self> {
        Self::new(Box::new(NativeAllocator::new()))
    }

    fn lock(&self) -> MutexGuard<'_, Box<dyn MemoryManager>> {
        self.manager.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Allocates on behalf of `op`. Zero-byte requests yield an empty
    /// allocation that touches no manager.
    pub fn allocate(self: &Arc<Self>, bytes: usize, op: &str) -> Result<Allocation> {
        if bytes == 0 {
            return Ok(Allocation {
                pool: None,
                block: None,
            });
        }
        let mut m = self.lock();
        m.on_op_begin(op);
        let block = m.alloc(bytes);
        m.on_op_end();
        Ok(Allocation {
            pool: Some(self.clone()),
            block: Some(block?),
        })
    }

    pub fn stats(&self) -> AllocatorStats {
        self.lock().stats()
    }

    pub fn name(&self) -> String {
        self.lock().name()
    }

    pub fn set_probe(&self, bytes: usize) {
        self.lock().set_probe(bytes);
    }

    /// Replaces the manager. Refused while the current one has live blocks.
    pub fn attach_manager(&self, manager: Box<dyn MemoryManager>) -> Result<Box<dyn MemoryManager>> {
        let mut m = self.lock();
        let live = m.stats().live_blocks;
        if live > 0 {
            return Err(Error::ManagerBusy(live));
        }
        Ok(std::mem::replace(&mut *m, manager))
    }

    /// Restores the native pass-through manager, returning the old one.
    pub fn detach_manager(&self) -> Result<Box<dyn MemoryManager>> {
        self.attach_manager(Box::new(NativeAllocator::new()))
    }
}

/// RAII guard for one granted block; frees it on drop.
#[derive(Debug)]
pub struct Allocation {
    pool: Option<Arc<MemoryPool>>,
    block: Option<MemoryBlock>,
}

impl Allocation {
    pub fn block(&self) -> Option<&MemoryBlock> {
        self.block.as_ref()
    }
}

impl Drop for Allocation {
    fn drop(&mut self) {
        if let (Some(pool), Some(block)) = (&self.pool, &self.block) {
            // The id was issued by this pool's manager and is freed once.
            let _ = pool.lock().free(block.block_id);
        }
    }
}
