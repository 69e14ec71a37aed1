//! Allocation traces: recording, text format and a synthetic generator.

use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, Mutex};

use super::{AllocatorStats, BlockId, MemoryBlock, MemoryManager};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Alloc { id: BlockId, bytes: usize, op: String },
    Free { id: BlockId },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AllocationTrace {
    pub events: Vec<TraceEvent>,
}

fn trace_err(index: usize, message: impl Into<String>) -> Error {
    Error::Trace {
        index,
        message: message.into(),
    }
}

impl AllocationTrace {
    pub fn new(events: Vec<TraceEvent>) -> Self {
        AllocationTrace { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Checks that ids are unique, sizes nonzero, and every free matches a
    /// live alloc. Errors carry the offending event index.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut live = HashSet::new();
        for (i, e) in self.events.iter().enumerate() {
            match e {
                TraceEvent::Alloc { id, bytes, .. } => {
                    if *bytes == 0 {
                        return Err(trace_err(i, "zero-byte alloc"));
                    }
                    if !seen.insert(*id) {
                        return Err(trace_err(i, format!("duplicate id {id}")));
                    }
                    live.insert(*id);
                }
                TraceEvent::Free { id } => {
                    if !live.remove(id) {
                        return Err(trace_err(i, format!("free of id {id} which is not live")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let index = events.len();
            let mut parts = line.splitn(4, ' ');
            let num = |s: Option<&str>, what: &str| -> Result<u64> {
                s.and_then(|s| s.parse().ok())
                    .ok_or_else(|| trace_err(index, format!("bad {what} in {line:?}")))
            };
            let event = match parts.next() {
                Some("A") => {
                    let id = num(parts.next(), "id")?;
                    let bytes = num(parts.next(), "size")? as usize;
                    let op = parts.next().unwrap_or("").trim().to_string();
                    if op.is_empty() {
                        return Err(trace_err(index, format!("missing op in {line:?}")));
                    }
                    TraceEvent::Alloc { id, bytes, op }
                }
                Some("F") => {
                    let id = num(parts.next(), "id")?;
                    if parts.next().is_some() {
                        return Err(trace_err(index, format!("trailing fields in {line:?}")));
                    }
                    TraceEvent::Free { id }
                }
                _ => return Err(trace_err(index, format!("unknown event {line:?}"))),
            };
            events.push(event);
        }
        let trace = AllocationTrace { events };
        trace.validate()?;
        Ok(trace)
    }

    /// Median alloc size, used as the external-fragmentation probe.
    pub fn median_alloc(&self) -> Option<usize> {
        let mut sizes: Vec<usize> = self
            .events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Alloc { bytes, .. } => Some(*bytes),
                TraceEvent::Free { .. } => None,
            })
            .collect();
        if sizes.is_empty() {
            return None;
        }
        sizes.sort_unstable();
        Some(sizes[sizes.len() / 2])
    }
}

impl fmt::Display for AllocationTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.events {
            match e {
                TraceEvent::Alloc { id, bytes, op } => writeln!(f, "A {id} {bytes} {op}")?,
                TraceEvent::Free { id } => writeln!(f, "F {id}")?,
            }
        }
        Ok(())
    }
}

/// Shared view of the events a [`TraceRecorder`] has captured.
#[derive(Debug, Clone, Default)]
pub struct TraceHandle(Arc<Mutex<Vec<TraceEvent>>>);

impl TraceHandle {
    pub fn trace(&self) -> AllocationTrace {
        AllocationTrace::new(self.0.lock().unwrap_or_else(|e| e.into_inner()).clone())
    }

    fn push(&self, e: TraceEvent) {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push(e);
    }
}

/// Manager wrapper that records every successful alloc and free.
pub struct TraceRecorder {
    inner: Box<dyn MemoryManager>,
    sink: TraceHandle,
}

impl TraceRecorder {
    pub fn new(inner: Box<dyn MemoryManager>) -> (Self, TraceHandle) {
        let sink = TraceHandle::default();
        (
            TraceRecorder {
                inner,
                sink: sink.clone(),
            },
            sink,
        )
    }
}

impl MemoryManager for TraceRecorder {
    fn name(&self) -> String {
        format!("trace({})", self.inner.name())
    }

    fn alloc(&mut self, bytes: usize) -> Result<MemoryBlock> {
        let block = self.inner.alloc(bytes)?;
        self.sink.push(TraceEvent::Alloc {
            id: block.block_id,
            bytes,
            op: block.originating_op.clone().unwrap_or_else(|| "unknown".into()),
        });
        Ok(block)
    }

    fn free(&mut self, block: BlockId) -> Result<()> {
        self.inner.free(block)?;
        self.sink.push(TraceEvent::Free { id: block });
        Ok(())
    }

    fn stats(&self) -> AllocatorStats {
        self.inner.stats()
    }

    fn on_op_begin(&mut self, op: &str) {
        self.inner.on_op_begin(op);
    }

    fn on_op_end(&mut self) {
        self.inner.on_op_end();
    }

    fn set_probe(&mut self, bytes: usize) {
        self.inner.set_probe(bytes);
    }

    fn block(&self, id: BlockId) -> Option<MemoryBlock> {
        self.inner.block(id)
    }
}

/// The trace shipped with the crate; identical to [`synthetic_training_trace`].
pub const BUNDLED_TRACE: &str = include_str!("../../data/synthetic_training.trace");

pub fn bundled_trace() -> AllocationTrace {
    AllocationTrace::parse(BUNDLED_TRACE).expect("bundled trace is well formed")
}

struct Gen {
    events: Vec<TraceEvent>,
    next: BlockId,
}

impl Gen {
    fn alloc(&mut self, elems: usize, op: &str) -> BlockId {
        let id = self.next;
        self.next += 1;
        self.events.push(TraceEvent::Alloc {
            id,
            bytes: elems * 4,
            op: op.into(),
        });
        id
    }

    fn free(&mut self, id: BlockId) {
        self.events.push(TraceEvent::Free { id });
    }
}

/// A deterministic trace imitating a few training steps of a small CNN and
/// an MLP in f32: parameters, activations, im2col buffers, gradients and
/// optimizer temporaries, with activations released in reverse order.
pub fn synthetic_training_trace() -> AllocationTrace {
    let mut g = Gen {
        events: Vec::new(),
        next: 1,
    };
    // (name, parameter elements, activation elements, workspace elements) per sample.
    let cnn: [(&str, usize, usize, usize); 6] = [
        ("conv2d", 32 * 25 + 32, 32 * 24 * 24, 25 * 24 * 24),
        ("max", 0, 32 * 12 * 12, 32 * 24 * 24),
        ("conv2d", 64 * 32 * 25 + 64, 64 * 8 * 8, 32 * 25 * 8 * 8),
        ("max", 0, 64 * 4 * 4, 64 * 8 * 8),
        ("matmul", 1024 * 128 + 128, 128, 128),
        ("matmul", 128 * 10 + 10, 10, 10),
    ];
    let mlp: [(&str, usize, usize, usize); 3] = [
        ("matmul", 784 * 256 + 256, 256, 256),
        ("matmul", 256 * 128 + 128, 128, 128),
        ("matmul", 128 * 10 + 10, 10, 10),
    ];
    for (layers, batches) in [(&cnn[..], [8usize, 6, 8, 5]), (&mlp[..], [50, 64, 50, 37])] {
        let params: Vec<(BlockId, usize)> = layers
            .iter()
            .filter(|l| l.1 > 0)
            .map(|l| (g.alloc(l.1, "from_host"), l.1))
            .collect();
        let momenta: Vec<BlockId> = params.iter().map(|&(_, n)| g.alloc(n, "full")).collect();
        for &b in &batches {
            let input = g.alloc(b * 784, "from_host");
            let mut acts = Vec::new();
            for &(op, _, act, work) in layers {
                let w = g.alloc(b * work, "unfold");
                let a = g.alloc(b * act, op);
                g.free(w);
                let r = g.alloc(b * act, "maximum");
                acts.push((a, b * act));
                acts.push((r, b * act));
            }
            let loss = g.alloc(1, "sum");
            for &(a, n) in acts.iter().rev() {
                let grad = g.alloc(n, "mul");
                g.free(a);
                g.free(grad);
            }
            let grads: Vec<BlockId> = params.iter().map(|&(_, n)| g.alloc(n, "matmul")).collect();
            for (&gid, &(_, n)) in grads.iter().zip(&params) {
                let t = g.alloc(n, "mul");
                g.free(t);
                g.free(gid);
            }
            g.free(loss);
            g.free(input);
        }
        for id in momenta.into_iter().chain(params.into_iter().map(|p| p.0)) {
            g.free(id);
        }
    }
    AllocationTrace::new(g.events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let t = AllocationTrace::new(vec![
            TraceEvent::Alloc {
                id: 1,
                bytes: 100,
                op: "add".into(),
            },
            TraceEvent::Free { id: 1 },
        ]);
        assert_eq!(AllocationTrace::parse(&t.to_string()).unwrap(), t);
    }

    #[test]
    fn malformed_traces_report_index() {
        let cases = [
            ("A 1 10 add\nF 2\n", 1),
            ("A 1 10 add\nA 1 10 add\n", 1),
            ("A 1 x add\n", 0),
            ("A 1 10 add\nF 1\nF 1\n", 2),
            ("Q 1\n", 0),
            ("A 1 0 add\n", 0),
        ];
        for (text, idx) in cases {
            match AllocationTrace::parse(text) {
                Err(Error::Trace { index, .. }) => assert_eq!(index, idx, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    /// Rewrites the bundled file: `cargo test -p kindling -- --ignored regenerate`.
    #[test]
    #[ignore]
    fn regenerate_bundled_trace() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_training.trace");
        std::fs::write(path, synthetic_training_trace().to_string()).unwrap();
    }

    #[test]
    fn bundled_file_matches_generator() {
        let generated = synthetic_training_trace();
        generated.validate().unwrap();
        assert_eq!(bundled_trace(), generated);
    }

    #[test]
    fn recorder_captures_hooked_ops() {
        let (mut rec, handle) = TraceRecorder::new(Box::new(crate::memory::NativeAllocator::new()));
        rec.on_op_begin("matmul");
        let b = rec.alloc(64).unwrap();
        rec.on_op_end();
        rec.free(b.block_id).unwrap();
        assert_eq!(
            handle.trace().to_string(),
            format!("A {0} 64 matmul\nF {0}\n", b.block_id)
        );
    }
}
