use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::ledger::Ledger;
use super::{bin_size, round_to_granule, AllocatorStats, BlockId, MemoryBlock, MemoryManager, MIN_BIN};
use crate::error::Result;

type SegId = u64;

/// Caching allocator that splits blocks up to a threshold size.
///
/// Requests whose bin is at most the threshold are carved at 512-byte
/// granularity out of cached blocks (best fit) or out of a fresh bin-sized
/// segment; freed neighbours coalesce. Larger requests behave exactly like
/// [`super::CachingAllocator`]: whole bin-sized blocks reused only by the
/// same bin. A threshold of zero therefore reproduces the caching policy.
#[derive(Debug)]
pub struct SplitRestrictedAllocator {
    ledger: Ledger,
    threshold: usize,
    segments: HashMap<SegId, usize>,
    next_seg: SegId,
    /// Free chunks keyed by position.
    free: BTreeMap<(SegId, usize), usize>,
    /// The same chunks ordered by size for best-fit lookup.
    by_size: BTreeSet<(usize, SegId, usize)>,
    live: HashMap<BlockId, (SegId, usize, usize)>,
    cache_bytes: usize,
}

impl SplitRestrictedAllocator {
    pub fn new(threshold: usize) -> Self {
        Self::with_capacity(threshold, usize::MAX)
    }

    pub fn with_capacity(threshold: usize, capacity: usize) -> Self {
        SplitRestrictedAllocator {
            ledger: Ledger::new(capacity),
            threshold,
            segments: HashMap::new(),
            next_seg: 0,
            free: BTreeMap::new(),
            by_size: BTreeSet::new(),
            live: HashMap::new(),
            cache_bytes: 0,
        }
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    fn insert_free(&mut self, seg: SegId, off: usize, size: usize) {
        self.free.insert((seg, off), size);
        self.by_size.insert((size, seg, off));
        self.cache_bytes += size;
    }

    fn remove_free(&mut self, seg: SegId, off: usize) -> usize {
        let size = self.free.remove(&(seg, off)).expect("free chunk present");
        self.by_size.remove(&(size, seg, off));
        self.cache_bytes -= size;
        size
    }

    /// Releases every segment that is entirely free.
    pub fn flush(&mut self) {
        let idle: Vec<SegId> = self
            .segments
            .iter()
            .filter(|(seg, size)| self.free.get(&(**seg, 0)) == Some(*size))
            .map(|(seg, _)| *seg)
            .collect();
        for seg in idle {
            self.remove_free(seg, 0);
            self.segments.remove(&seg);
        }
    }

    fn fresh_segment(&mut self, requested: usize, size: usize) -> Result<SegId> {
        if !self.ledger.fits(size, self.cache_bytes) {
            self.flush();
            if !self.ledger.fits(size, self.cache_bytes) {
                return Err(self.ledger.oom(requested, self.cache_bytes));
            }
        }
        self.ledger.system_alloc();
        let seg = self.next_seg;
        self.next_seg += 1;
        self.segments.insert(seg, size);
        Ok(seg)
    }

    /// Grants `want` bytes from the front of a chunk, caching the remainder
    /// unless it is smaller than one granule.
    fn carve(&mut self, seg: SegId, off: usize, size: usize, want: usize) -> usize {
        let rest = size - want;
        if rest >= MIN_BIN {
            self.insert_free(seg, off + want, rest);
            want
        } else {
            size
        }
    }

    fn splittable(&self, bin: usize) -> bool {
        bin <= self.threshold
    }
}

impl MemoryManager for SplitRestrictedAllocator {
    fn name(&self) -> String {
        format!("split:{}", self.threshold)
    }

    fn alloc(&mut self, bytes: usize) -> Result<MemoryBlock> {
        self.ledger.check_request(bytes)?;
        let bin = bin_size(bytes);
        let (seg, off, granted) = if self.splittable(bin) {
            let want = round_to_granule(bytes);
            let fit = self
                .by_size
                .range((want, 0, 0)..=(self.threshold, SegId::MAX, usize::MAX))
                .next()
                .copied();
            match fit {
                Some((size, seg, off)) => {
                    self.remove_free(seg, off);
                    self.ledger.cache_hit();
                    (seg, off, self.carve(seg, off, size, want))
                }
                None => {
                    let seg = self.fresh_segment(bytes, bin)?;
                    (seg, 0, self.carve(seg, 0, bin, want))
                }
            }
        } else {
            let exact = self
                .by_size
                .range((bin, 0, 0)..=(bin, SegId::MAX, usize::MAX))
                .next()
                .copied();
            match exact {
                Some((size, seg, off)) => {
                    self.remove_free(seg, off);
                    self.ledger.cache_hit();
                    (seg, off, size)
                }
                None => (self.fresh_segment(bytes, bin)?, 0, bin),
            }
        };
        let block = self.ledger.issue(bytes, granted, Some(bin));
        self.live.insert(block.block_id, (seg, off, granted));
        self.ledger.touch(self.cache_bytes);
        Ok(block)
    }

    fn free(&mut self, block: BlockId) -> Result<()> {
        self.ledger.retire(block)?;
        let (seg, mut off, mut size) = self.live.remove(&block).expect("ledger and map agree");
        if let Some((&(pseg, poff), &psize)) = self.free.range(..(seg, off)).next_back() {
            if pseg == seg && poff + psize == off {
                self.remove_free(seg, poff);
                off = poff;
                size += psize;
            }
        }
        if let Some(&nsize) = self.free.get(&(seg, off + size)) {
            self.remove_free(seg, off + size);
            size += nsize;
        }
        self.insert_free(seg, off, size);
        Ok(())
    }

    fn stats(&self) -> AllocatorStats {
        let probe = self.ledger.probe;
        let bin = bin_size(probe);
        let usable: usize = if self.splittable(bin) {
            let want = round_to_granule(probe);
            self.by_size
                .range((want, 0, 0)..=(self.threshold, SegId::MAX, usize::MAX))
                .map(|c| c.0)
                .sum()
        } else {
            self.by_size
                .range((bin, 0, 0)..=(bin, SegId::MAX, usize::MAX))
                .map(|c| c.0)
                .sum()
        };
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
    use crate::memory::CachingAllocator;
    use proptest::prelude::*;

    #[test]
    fn splits_small_requests_at_granule() {
        let mut m = SplitRestrictedAllocator::new(1 << 20);
        let a = m.alloc(600).unwrap();
        assert_eq!(a.granted_bytes, 1024);
        let b = m.alloc(1100).unwrap();
        assert_eq!(b.granted_bytes, 1536);
        // The 2048-byte segment left a 512-byte tail cached.
        assert_eq!(m.stats().cache_bytes, 512);
        let c = m.alloc(10).unwrap();
        assert_eq!(m.stats().cache_hits, 1);
        for id in [a.block_id, b.block_id, c.block_id] {
            m.free(id).unwrap();
        }
        // Coalesced back into whole segments.
        assert_eq!(m.free.len(), 2);
    }

    #[test]
    fn oversize_blocks_reused_only_by_same_bin() {
        let mut m = SplitRestrictedAllocator::new(4096);
        let a = m.alloc(10_000).unwrap();
        assert_eq!(a.granted_bytes, 16384);
        m.free(a.block_id).unwrap();
        m.alloc(5_000).unwrap();
        assert_eq!(m.stats().system_alloc_count, 2);
        m.alloc(9_000).unwrap();
        assert_eq!(m.stats().cache_hits, 1);
    }

    #[test]
    fn flush_releases_idle_segments() {
        let mut m = SplitRestrictedAllocator::with_capacity(1 << 20, 4096);
        let a = m.alloc(2048).unwrap();
        m.free(a.block_id).unwrap();
        m.alloc(4000).unwrap();
        assert_eq!(m.stats().cache_bytes, 0);
    }

    #[derive(Debug, Clone)]
    enum Ev {
        Alloc(usize),
        Free(usize),
    }

    fn events() -> impl Strategy<Value = Vec<Ev>> {
        prop::collection::vec(
            prop_oneof![(1usize..20_000).prop_map(Ev::Alloc), (0usize..64).prop_map(Ev::Free)],
            1..200,
        )
    }

    fn run(m: &mut dyn MemoryManager, evs: &[Ev]) -> Vec<AllocatorStats> {
        let mut live = Vec::new();
        let mut out = Vec::new();
        for e in evs {
            match e {
                Ev::Alloc(n) => live.push(m.alloc(*n).unwrap().block_id),
                Ev::Free(k) if !live.is_empty() => {
                    let id = live.swap_remove(k % live.len());
                    m.free(id).unwrap();
                }
                Ev::Free(_) => {}
            }
            out.push(m.stats());
        }
        out
    }

    proptest! {
        #[test]
        fn zero_threshold_matches_caching(evs in events()) {
            let a = run(&mut SplitRestrictedAllocator::new(0), &evs);
            let b = run(&mut CachingAllocator::new(), &evs);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn accounting_is_consistent(evs in events(), t in 0usize..40_000) {
            let mut m = SplitRestrictedAllocator::new(t);
            for s in run(&mut m, &evs) {
                prop_assert!(s.live_bytes_granted >= s.live_bytes_requested);
                prop_assert_eq!(s.reserved_bytes, s.live_bytes_granted + s.cache_bytes);
                prop_assert!(s.peak_reserved >= s.reserved_bytes);
            }
            let seg_total: usize = m.segments.values().sum();
            let s = m.stats();
            prop_assert_eq!(seg_total, s.live_bytes_granted + s.cache_bytes);
        }
    }
}
