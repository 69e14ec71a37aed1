use super::ledger::Ledger;
use super::{AllocatorStats, BlockId, MemoryBlock, MemoryManager};
use crate::error::Result;

/// Pass-through policy: every request goes to the system at its exact size
/// and every free returns memory immediately.
#[derive(Debug)]
pub struct NativeAllocator {
    ledger: Ledger,
}

impl NativeAllocator {
    pub fn new() -> Self {
        Self::with_capacity(usize::MAX)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        NativeAllocator {
            ledger: Ledger::new(capacity),
        }
    }
}

impl Default for NativeAllocator {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryManager for NativeAllocator {
    fn name(&self) -> String {
        "native".into()
    }

    fn alloc(&mut self, bytes: usize) -> Result<MemoryBlock> {
        self.ledger.check_request(bytes)?;
        if !self.ledger.fits(bytes, 0) {
            return Err(self.ledger.oom(bytes, 0));
        }
        self.ledger.system_alloc();
        let block = self.ledger.issue(bytes, bytes, None);
        self.ledger.touch(0);
        Ok(block)
    }

    fn free(&mut self, block: BlockId) -> Result<()> {
        self.ledger.retire(block).map(|_| ())
    }

    fn stats(&self) -> AllocatorStats {
        self.ledger.snapshot(0, 0)
    }

    fn on_op_begin(&mut self, op: &str) {
        self.ledger.begin_op(op);
    }

    fn on_op_end(&mut self) {
        self.ledger.end_op();
    }

    fn set_probe(&mut self, bytes: usize) {
        self.ledger.probe = bytes;
    }

    fn block(&self, id: BlockId) -> Option<MemoryBlock> {
        self.ledger.block(id)
    }
}
