use std::collections::HashMap;

use super::{AllocatorStats, BlockId, MemoryBlock};
use crate::error::{Error, Result};

/// Bookkeeping shared by every allocator policy: live blocks, counters,
/// the op-name hook state and the simulated capacity.
#[derive(Debug)]
pub(crate) struct Ledger {
    live: HashMap<BlockId, MemoryBlock>,
    next_id: BlockId,
    current_op: Option<String>,
    stats: AllocatorStats,
    pub capacity: usize,
    pub probe: usize,
}

impl Ledger {
    pub fn new(capacity: usize) -> Self {
        Ledger {
            live: HashMap::new(),
            next_id: 1,
            current_op: None,
            stats: AllocatorStats::default(),
            capacity,
            probe: super::MIN_BIN,
        }
    }

    pub fn check_request(&self, bytes: usize) -> Result<()> {
        if bytes == 0 {
            return Err(Error::Config("zero-byte allocation request".into()));
        }
        Ok(())
    }

    /// Whether `extra` more system bytes fit, given current cache size.
    pub fn fits(&self, extra: usize, cache_bytes: usize) -> bool {
        self.stats.live_bytes_granted + cache_bytes + extra <= self.capacity
    }

    pub fn oom(&self, requested: usize, cache_bytes: usize) -> Error {
        Error::OutOfMemory {
            requested,
            available: self
                .capacity
                .saturating_sub(self.stats.live_bytes_granted + cache_bytes),
        }
    }

    pub fn issue(&mut self, requested: usize, granted: usize, bin: Option<usize>) -> MemoryBlock {
        let block = MemoryBlock {
            block_id: self.next_id,
            requested_bytes: requested,
            granted_bytes: granted,
            bin_size: bin,
            originating_op: self.current_op.clone(),
        };
        self.next_id += 1;
        let s = &mut self.stats;
        s.alloc_count += 1;
        s.live_blocks += 1;
        s.live_bytes_requested += requested;
        s.live_bytes_granted += granted;
        s.peak_granted = s.peak_granted.max(s.live_bytes_granted);
        let frag = s.live_bytes_granted - s.live_bytes_requested;
        s.peak_internal_fragmentation = s.peak_internal_fragmentation.max(frag);
        self.live.insert(block.block_id, block.clone());
        block
    }

    pub fn retire(&mut self, id: BlockId) -> Result<MemoryBlock> {
        let Some(block) = self.live.remove(&id) else {
            return Err(if id > 0 && id < self.next_id {
                Error::DoubleFree(id)
            } else {
                Error::UnknownBlock(id)
            });
        };
        let s = &mut self.stats;
        s.free_count += 1;
        s.live_blocks -= 1;
        s.live_bytes_requested -= block.requested_bytes;
        s.live_bytes_granted -= block.granted_bytes;
        Ok(block)
    }

    pub fn system_alloc(&mut self) {
        self.stats.system_alloc_count += 1;
    }

    pub fn cache_hit(&mut self) {
        self.stats.cache_hits += 1;
    }

    /// Refreshes reserved-bytes peaks after any change.
    pub fn touch(&mut self, cache_bytes: usize) {
        let reserved = self.stats.live_bytes_granted + cache_bytes;
        self.stats.peak_reserved = self.stats.peak_reserved.max(reserved);
    }

    pub fn block(&self, id: BlockId) -> Option<MemoryBlock> {
        self.live.get(&id).cloned()
    }

    pub fn begin_op(&mut self, op: &str) {
        self.current_op = Some(op.to_string());
    }

    pub fn end_op(&mut self) {
        self.current_op = None;
    }

    pub fn snapshot(&self, cache_bytes: usize, unusable_cached: usize) -> AllocatorStats {
        let mut s = self.stats.clone();
        s.cache_bytes = cache_bytes;
        s.reserved_bytes = s.live_bytes_granted + cache_bytes;
        s.internal_fragmentation = s.live_bytes_granted - s.live_bytes_requested;
        s.external_fragmentation_ratio = if cache_bytes == 0 {
            0.0
        } else {
            unusable_cached as f64 / cache_bytes as f64
        };
        s
    }
}
