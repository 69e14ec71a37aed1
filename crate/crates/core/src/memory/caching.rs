use std::collections::BTreeMap;

use super::ledger::Ledger;
use super::{bin_size, AllocatorStats, BlockId, MemoryBlock, MemoryManager};
use crate::error::Result;

/// Power-of-two bin cache: requests round up to their bin, freed blocks
/// stay cached and are reused only by requests of the same bin.
#[derive(Debug)]
pub struct CachingAllocator {
    ledger: Ledger,
    cache: BTreeMap<usize, usize>,
    cache_bytes: usize,
}

impl CachingAllocator {
    pub fn new() -> Self {
        Self::with_capacity(usize::MAX)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        CachingAllocator {
            ledger: Ledger::new(capacity),
            cache: BTreeMap::new(),
            cache_bytes: 0,
        }
    }

    /// Returns all cached blocks to the system.
    pub fn flush(&mut self) {
        self.cache.clear();
        self.cache_bytes = 0;
    }

    fn take_cached(&mut self, bin: usize) -> bool {
        match self.cache.get_mut(&bin) {
            Some(n) => {
                *n -= 1;
                if *n == 0 {
                    self.cache.remove(&bin);
                }
                self.cache_bytes -= bin;
                true
            }
            None => false,
        }
    }
}

impl Default for CachingAllocator {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryManager for CachingAllocator {
    fn name(&self) -> String {
        "caching".into()
    }

    fn alloc(&mut self, bytes: usize) -> Result<MemoryBlock> {
        self.ledger.check_request(bytes)?;
        let bin = bin_size(bytes);
        if self.take_cached(bin) {
            self.ledger.cache_hit();
        } else {
            if !self.ledger.fits(bin, self.cache_bytes) {
                self.flush();
                if !self.ledger.fits(bin, 0) {
                    return Err(self.ledger.oom(bytes, 0));
                }
            }
            self.ledger.system_alloc();
        }
        let block = self.ledger.issue(bytes, bin, Some(bin));
        self.ledger.touch(self.cache_bytes);
        Ok(block)
    }

    fn free(&mut self, block: BlockId) -> Result<()> {
        let b = self.ledger.retire(block)?;
        *self.cache.entry(b.granted_bytes).or_insert(0) += 1;
        self.cache_bytes += b.granted_bytes;
        Ok(())
    }

    fn stats(&self) -> AllocatorStats {
        let probe_bin = bin_size(self.ledger.probe);
        let usable = self.cache.get(&probe_bin).map_or(0, |n| n * probe_bin);
        self.ledger.snapshot(self.cache_bytes, self.cache_bytes - usable)
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn rounds_to_bins_and_reuses() {
        let mut m = CachingAllocator::new();
        let a = m.alloc(600).unwrap();
        assert_eq!(a.granted_bytes, 1024);
        assert_eq!(a.internal_fragmentation(), 424);
        m.free(a.block_id).unwrap();
        assert_eq!(m.stats().cache_bytes, 1024);
        let b = m.alloc(1000).unwrap();
        let s = m.stats();
        assert_eq!((s.cache_hits, s.system_alloc_count, s.cache_bytes), (1, 1, 0));
        m.free(b.block_id).unwrap();
        // A different bin cannot use the cached block.
        m.alloc(100).unwrap();
        assert_eq!(m.stats().system_alloc_count, 2);
    }

    #[test]
    fn flushes_before_reporting_oom() {
        let mut m = CachingAllocator::with_capacity(2048);
        let a = m.alloc(1024).unwrap();
        m.free(a.block_id).unwrap();
        m.alloc(2000).unwrap();
        assert_eq!(m.stats().cache_bytes, 0);
        assert!(matches!(m.alloc(10), Err(Error::OutOfMemory { .. })));
    }

    #[test]
    fn external_ratio_uses_probe() {
        let mut m = CachingAllocator::new();
        let a = m.alloc(4096).unwrap();
        let b = m.alloc(512).unwrap();
        m.free(a.block_id).unwrap();
        m.free(b.block_id).unwrap();
        m.set_probe(512);
        assert!((m.stats().external_fragmentation_ratio - 4096.0 / 4608.0).abs() < 1e-12);
    }
}
