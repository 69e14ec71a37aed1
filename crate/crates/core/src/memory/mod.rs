//! Pluggable memory management.
//!
//! A [`MemoryManager`] decides how many bytes each request is granted and
//! what happens to freed blocks. Backends route every tensor payload through
//! a [`MemoryPool`], which holds the currently attached manager and hands out
//! RAII [`Allocation`]s. The "device" is simulated: managers account for
//! bytes against a configurable capacity while the payload itself lives in
//! ordinary host memory.

mod caching;
mod ledger;
mod native;
mod pool;
pub mod replay;
mod split;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use caching::CachingAllocator;
pub use native::NativeAllocator;
pub use pool::{Allocation, MemoryPool};
pub use replay::{replay, Policy, ReplayReport};
pub use split::SplitRestrictedAllocator;
pub use trace::{AllocationTrace, TraceEvent, TraceHandle, TraceRecorder};

pub type BlockId = u64;

/// Smallest bin; every cached request rounds up to at least this.
pub const MIN_BIN: usize = 512;

/// Default split threshold for [`SplitRestrictedAllocator`].
pub const DEFAULT_SPLIT_THRESHOLD: usize = 1 << 20;

/// Bin for a request: 512 bytes or the next power of two above that.
pub fn bin_size(bytes: usize) -> usize {
    if bytes <= MIN_BIN {
        MIN_BIN
    } else {
        bytes.next_power_of_two()
    }
}

/// Request rounded up to the 512-byte split granularity.
pub fn round_to_granule(bytes: usize) -> usize {
    bytes.div_ceil(MIN_BIN).max(1) * MIN_BIN
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBlock {
    pub block_id: BlockId,
    pub requested_bytes: usize,
    pub granted_bytes: usize,
    pub bin_size: Option<usize>,
    pub originating_op: Option<String>,
}

impl MemoryBlock {
    pub fn internal_fragmentation(&self) -> usize {
        self.granted_bytes - self.requested_bytes
    }
}

/// Allocator telemetry. Byte counters are exact; the external ratio is
/// measured against the manager's probe request size.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocatorStats {
    pub live_bytes_requested: usize,
    pub live_bytes_granted: usize,
    pub live_blocks: usize,
    pub peak_granted: usize,
    pub cache_bytes: usize,
    /// Bytes held from the system: live granted plus cached.
    pub reserved_bytes: usize,
    pub peak_reserved: usize,
    pub alloc_count: u64,
    pub free_count: u64,
    pub system_alloc_count: u64,
    pub cache_hits: u64,
    pub internal_fragmentation: usize,
    pub peak_internal_fragmentation: usize,
    pub external_fragmentation_ratio: f64,
}

/// The memory-management interface every allocator policy implements.
pub trait MemoryManager: Send {
    fn name(&self) -> String;

    /// Grants at least `bytes`. Zero-byte requests are rejected.
    fn alloc(&mut self, bytes: usize) -> Result<MemoryBlock>;

    fn free(&mut self, block: BlockId) -> Result<()>;

    fn stats(&self) -> AllocatorStats;

    /// Called before an operation's allocations; blocks created until the
    /// matching `on_op_end` carry `op` as their originating op.
    fn on_op_begin(&mut self, _op: &str) {}

    fn on_op_end(&mut self) {}

    /// Request size used for the external-fragmentation ratio.
    fn set_probe(&mut self, _bytes: usize) {}

    /// Live block metadata, for telemetry.
    fn block(&self, _id: BlockId) -> Option<MemoryBlock> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_schedule() {
        assert_eq!(bin_size(1), 512);
        assert_eq!(bin_size(512), 512);
        assert_eq!(bin_size(513), 1024);
        assert_eq!(bin_size(600), 1024);
        assert_eq!(bin_size(4096), 4096);
        assert_eq!(round_to_granule(1), 512);
        assert_eq!(round_to_granule(1100), 1536);
    }
}
