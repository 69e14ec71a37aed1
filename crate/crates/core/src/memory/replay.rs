//! Deterministic replay of allocation traces under a chosen policy.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use super::trace::{AllocationTrace, TraceEvent};
use super::{AllocatorStats, CachingAllocator, MemoryManager, NativeAllocator, SplitRestrictedAllocator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Native,
    Caching,
    SplitRestricted { threshold: usize },
}

impl Policy {
    pub fn manager(self) -> Box<dyn MemoryManager> {
        self.manager_with_capacity(usize::MAX)
    }

    pub fn manager_with_capacity(self, capacity: usize) -> Box<dyn MemoryManager> {
        match self {
            Policy::Native => Box::new(NativeAllocator::with_capacity(capacity)),
            Policy::Caching => Box::new(CachingAllocator::with_capacity(capacity)),
            Policy::SplitRestricted { threshold } => {
                Box::new(SplitRestrictedAllocator::with_capacity(threshold, capacity))
            }
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Native => f.write_str("native"),
            Policy::Caching => f.write_str("caching"),
            Policy::SplitRestricted { threshold } => write!(f, "split:{threshold}"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    /// Accepts `native`, `caching`, `split` (1 MiB threshold) or `split:<bytes>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(Policy::Native),
            "caching" => Ok(Policy::Caching),
            "split" => Ok(Policy::SplitRestricted {
                threshold: super::DEFAULT_SPLIT_THRESHOLD,
            }),
            _ => s
                .strip_prefix("split:")
                .and_then(|t| t.parse().ok())
                .map(|threshold| Policy::SplitRestricted { threshold })
                .ok_or_else(|| Error::Config(format!("unknown allocator policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub policy: Policy,
    /// Stats after each event.
    pub timeline: Vec<AllocatorStats>,
    pub final_stats: AllocatorStats,
}

impl ReplayReport {
    pub fn peak_internal_fragmentation(&self) -> usize {
        self.final_stats.peak_internal_fragmentation
    }
}

pub fn replay(trace: &AllocationTrace, policy: Policy) -> Result<ReplayReport> {
    trace.validate()?;
    let mut m = policy.manager();
    if let Some(p) = trace.median_alloc() {
        m.set_probe(p);
    }
    let mut ids = HashMap::new();
    let mut timeline = Vec::with_capacity(trace.len());
    for (index, e) in trace.events.iter().enumerate() {
        match e {
            TraceEvent::Alloc { id, bytes, op } => {
                m.on_op_begin(op);
                let block = m.alloc(*bytes);
                m.on_op_end();
                let block = block.map_err(|e| Error::Trace {
                    index,
                    message: e.to_string(),
                })?;
                ids.insert(*id, block.block_id);
            }
            TraceEvent::Free { id } => m.free(ids.remove(id).expect("validated trace"))?,
        }
        timeline.push(m.stats());
    }
    Ok(ReplayReport {
        policy,
        timeline,
        final_stats: m.stats(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::trace::bundled_trace;

    fn one_shot() -> AllocationTrace {
        AllocationTrace::parse("A 1 100 add\nF 1\n").unwrap()
    }

    #[test]
    fn empty_trace_is_all_zero() {
        for p in [
            Policy::Native,
            Policy::Caching,
            Policy::SplitRestricted { threshold: 1 << 20 },
        ] {
            let r = replay(&AllocationTrace::default(), p).unwrap();
            assert!(r.timeline.is_empty());
            assert_eq!(r.final_stats, AllocatorStats::default());
        }
    }

    #[test]
    fn single_alloc_native_and_caching() {
        let n = replay(&one_shot(), Policy::Native).unwrap().final_stats;
        assert_eq!((n.peak_granted, n.peak_internal_fragmentation), (100, 0));
        let c = replay(&one_shot(), Policy::Caching).unwrap().final_stats;
        assert_eq!((c.peak_granted, c.peak_internal_fragmentation), (512, 412));
    }

    #[test]
    fn policy_parsing() {
        assert_eq!(
            "split:4096".parse::<Policy>().unwrap(),
            Policy::SplitRestricted { threshold: 4096 }
        );
        assert_eq!("caching".parse::<Policy>().unwrap().to_string(), "caching");
        assert!("split:x".parse::<Policy>().is_err());
    }

    #[test]
    fn bundled_trace_is_conserved_and_deterministic() {
        let t = bundled_trace();
        for p in [
            Policy::Native,
            Policy::Caching,
            Policy::SplitRestricted { threshold: 1 << 20 },
        ] {
            let a = replay(&t, p).unwrap();
            assert_eq!(a.final_stats.live_bytes_requested, 0);
            assert_eq!(a.final_stats.live_blocks, 0);
            assert_eq!(a, replay(&t, p).unwrap());
        }
    }
}
