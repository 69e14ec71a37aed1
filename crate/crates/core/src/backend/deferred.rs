//! Lazy backend: primitives record a dataflow graph that is evaluated only
//! when values are requested, fusing single-consumer elementwise chains.

use std::any::Any;
use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use super::eager::DenseStorage;
use super::{adapters, Backend, TensorAdapter};
use crate::dtype::{Buffer, DType};
use crate::error::Result;
use crate::kernels::fused::{Program, Source, Step};
use crate::kernels::{self};
use crate::memory::MemoryPool;
use crate::op::{HostBuffer, Op};
use crate::shape::Shape;
use crate::tensor::Tensor;

pub type NodeId = u64;

/// Below this many nodes the graph is never pruned automatically.
const MIN_AUTO_PRUNE: usize = 1024;

#[derive(Debug)]
struct GraphNode {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Shape,
    dtype: DType,
    value: Option<Arc<DenseStorage>>,
    /// Live tensor handles referring to this node.
    handles: usize,
    /// Graph nodes using this node as an input.
    uses: usize,
}

#[derive(Debug, Default)]
struct Graph {
    nodes: HashMap<NodeId, GraphNode>,
    next_id: NodeId,
    pruned_size: usize,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DeferredStats {
    /// Nodes evaluated, counting a fused chain as one.
    pub evaluations: u64,
    /// Fused kernels that covered more than one node.
    pub fused_kernels: u64,
    /// Nodes folded into another node's fused kernel.
    pub fused_nodes: u64,
}

struct State {
    graph: Mutex<Graph>,
    pool: Arc<MemoryPool>,
    evaluations: AtomicU64,
    fused_kernels: AtomicU64,
    fused_nodes: AtomicU64,
}

impl State {
    fn lock(&self) -> MutexGuard<'_, Graph> {
        self.graph.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn materialize(&self, root: NodeId) -> Result<Arc<DenseStorage>> {
        let mut g = self.lock();
        let mut stack = vec![(root, false)];
        while let Some((id, expanded)) = stack.pop() {
            if g.nodes[&id].value.is_some() {
                continue;
            }
            if expanded {
                let value = self.evaluate(&g, id)?;
                g.nodes.get_mut(&id).expect("node present").value = Some(value);
                continue;
            }
            stack.push((id, true));
            for dep in dependencies(&g, id) {
                if g.nodes[&dep].value.is_none() {
                    stack.push((dep, false));
                }
            }
        }
        Ok(g.nodes[&root].value.clone().expect("root evaluated"))
    }

    /// Computes one node whose dependencies are all materialized.
    fn evaluate(&self, g: &Graph, id: NodeId) -> Result<Arc<DenseStorage>> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let node = &g.nodes[&id];
        if let Op::Reshape(_) = node.op {
            return Ok(g.nodes[&node.inputs[0]].value.clone().expect("input evaluated"));
        }
        let buffer = if node.op.is_elementwise() && !matches!(node.op, Op::Full { .. }) {
            self.evaluate_fused(g, id)?
        } else {
            let values: Vec<(&Shape, &Buffer)> = node
                .inputs
                .iter()
                .map(|i| {
                    let n = &g.nodes[i];
                    (&n.shape, n.value.as_ref().expect("input evaluated").buffer())
                })
                .collect();
            kernels::compute(&node.op, &values, &node.shape, node.dtype)?
        };
        DenseStorage::allocate(&self.pool, node.op.primitive_name(), buffer)
    }

    fn evaluate_fused(&self, g: &Graph, root: NodeId) -> Result<Buffer> {
        let region = fusion_region(g, root);
        let mut index: HashMap<NodeId, usize> = HashMap::new();
        let mut sources = Vec::new();
        for &leaf in &region.leaves {
            let n = &g.nodes[&leaf];
            index.insert(leaf, sources.len());
            sources.push(match (&n.op, &n.value) {
                (_, Some(v)) => Source::Dense {
                    shape: &n.shape,
                    data: v.buffer(),
                },
                (Op::Full { value, dtype, .. }, None) => Source::Constant {
                    value: *value,
                    dtype: *dtype,
                },
                _ => unreachable!("leaf neither materialized nor constant"),
            });
        }
        let mut steps = Vec::with_capacity(region.steps.len());
        let mut step_dtypes = Vec::with_capacity(region.steps.len());
        for &sid in &region.steps {
            let n = &g.nodes[&sid];
            let at = |k: usize| index[&n.inputs[k]];
            steps.push(match &n.op {
                Op::Unary(u) => Step::Unary(*u, at(0)),
                Op::Binary(b) => Step::Binary(*b, at(0), at(1)),
                Op::BinaryScalar { op, scalar } => Step::Scalar(*op, at(0), *scalar),
                Op::Select => Step::Select(at(0), at(1), at(2)),
                other => unreachable!("{other:?} in fused region"),
            });
            step_dtypes.push(n.dtype);
            index.insert(sid, sources.len() + steps.len() - 1);
        }
        if steps.len() > 1 {
            self.fused_kernels.fetch_add(1, Ordering::Relaxed);
            self.fused_nodes.fetch_add(steps.len() as u64 - 1, Ordering::Relaxed);
        }
        let node = &g.nodes[&root];
        Program {
            sources,
            steps,
            step_dtypes,
        }
        .evaluate(&node.shape, node.dtype)
    }
}

/// Whether `id` can be folded into its single consumer's kernel.
fn inlinable(g: &Graph, id: NodeId) -> bool {
    let n = &g.nodes[&id];
    n.op.is_elementwise() && n.value.is_none() && n.uses == 1 && n.handles == 0
}

struct Region {
    /// Distinct inputs to the fused kernel, in first-use order.
    leaves: Vec<NodeId>,
    /// Nodes computed inside the kernel in topological order; root last.
    steps: Vec<NodeId>,
}

fn fusion_region(g: &Graph, root: NodeId) -> Region {
    let mut region = Region {
        leaves: Vec::new(),
        steps: Vec::new(),
    };
    let mut seen = HashSet::new();
    // Post-order walk over inlinable inputs.
    let mut stack = vec![(root, false)];
    while let Some((id, expanded)) = stack.pop() {
        if expanded {
            region.steps.push(id);
            continue;
        }
        stack.push((id, true));
        for &i in g.nodes[&id].inputs.iter().rev() {
            let n = &g.nodes[&i];
            let constant = matches!(n.op, Op::Full { .. }) && inlinable(g, i);
            if inlinable(g, i) && !constant {
                stack.push((i, false));
            } else if seen.insert(i) {
                region.leaves.push(i);
            }
        }
    }
    region
}

/// Nodes that must be materialized before `id` can be evaluated.
fn dependencies(g: &Graph, id: NodeId) -> Vec<NodeId> {
    let n = &g.nodes[&id];
    if n.op.is_elementwise() && !matches!(n.op, Op::Full { .. }) {
        fusion_region(g, id)
            .leaves
            .into_iter()
            .filter(|&l| !(matches!(g.nodes[&l].op, Op::Full { .. }) && inlinable(g, l)))
            .collect()
    } else {
        n.inputs.clone()
    }
}

impl Graph {
    fn prune(&mut self) {
        let mut keep = HashSet::new();
        let mut stack: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.handles > 0)
            .map(|(&id, _)| id)
            .collect();
        while let Some(id) = stack.pop() {
            if !keep.insert(id) {
                continue;
            }
            let n = &self.nodes[&id];
            if n.value.is_none() {
                stack.extend(n.inputs.iter().copied());
            }
        }
        let dead: Vec<NodeId> = self.nodes.keys().filter(|id| !keep.contains(id)).copied().collect();
        for id in &dead {
            let n = self.nodes.remove(id).expect("node present");
            for i in n.inputs {
                if let Some(input) = self.nodes.get_mut(&i) {
                    input.uses -= 1;
                }
            }
        }
        self.pruned_size = self.nodes.len();
    }
}

/// Tensor state on the deferred backend: a handle to one graph node.
pub struct DeferredAdapter {
    node: NodeId,
    shape: Shape,
    dtype: DType,
    state: Arc<State>,
}

impl DeferredAdapter {
    pub fn node(&self) -> NodeId {
        self.node
    }
}

impl fmt::Debug for DeferredAdapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeferredAdapter(node {}, {} {})", self.node, self.shape, self.dtype)
    }
}

impl Drop for DeferredAdapter {
    fn drop(&mut self) {
        if let Some(n) = self.state.lock().nodes.get_mut(&self.node) {
            n.handles -= 1;
        }
    }
}

impl TensorAdapter for DeferredAdapter {
    fn shape(&self) -> &Shape {
        &self.shape
    }

    fn dtype(&self) -> DType {
        self.dtype
    }

    fn to_host(&self) -> Result<HostBuffer> {
        let v = self.state.materialize(self.node)?;
        Ok(HostBuffer {
            shape: self.shape.clone(),
            data: v.buffer().clone(),
        })
    }

    fn materialize(&self) -> Result<()> {
        self.state.materialize(self.node).map(|_| ())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub struct DeferredBackend {
    id: String,
    state: Arc<State>,
    rng: Mutex<u64>,
}

impl DeferredBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self::with_pool(id, MemoryPool::native())
    }

    pub fn with_pool(id: impl Into<String>, pool: Arc<MemoryPool>) -> Self {
        DeferredBackend {
            id: id.into(),
            state: Arc::new(State {
                graph: Mutex::new(Graph::default()),
                pool,
                evaluations: AtomicU64::new(0),
                fused_kernels: AtomicU64::new(0),
                fused_nodes: AtomicU64::new(0),
            }),
            rng: Mutex::new(0),
        }
    }

    pub fn node_count(&self) -> usize {
        self.state.lock().nodes.len()
    }

    pub fn materialized_count(&self) -> usize {
        self.state.lock().nodes.values().filter(|n| n.value.is_some()).count()
    }

    pub fn stats(&self) -> DeferredStats {
        DeferredStats {
            evaluations: self.state.evaluations.load(Ordering::Relaxed),
            fused_kernels: self.state.fused_kernels.load(Ordering::Relaxed),
            fused_nodes: self.state.fused_nodes.load(Ordering::Relaxed),
        }
    }

    /// Drops nodes no live tensor can reach.
    pub fn prune_unreferenced(&self) {
        self.state.lock().prune();
    }

    /// Graphviz rendering of the current graph.
    pub fn to_dot(&self) -> String {
        let g = self.state.lock();
        let mut ids: Vec<&NodeId> = g.nodes.keys().collect();
        ids.sort();
        let mut out = String::from("digraph deferred {\n  node [shape=box];\n");
        for id in ids {
            let n = &g.nodes[id];
            let style = if n.value.is_some() { ", style=filled" } else { "" };
            let _ = writeln!(
                out,
                "  n{id} [label=\"{} {} {}\"{style}];",
                n.op.primitive_name(),
                n.shape,
                n.dtype
            );
            for i in &n.inputs {
                if g.nodes.contains_key(i) {
                    let _ = writeln!(out, "  n{i} -> n{id};");
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

impl Backend for DeferredBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn execute(&self, op: &Op, inputs: &[&Tensor]) -> Result<Arc<dyn TensorAdapter>> {
        let ins: Vec<&DeferredAdapter> = adapters(&self.id, inputs)?;
        if let Some(foreign) = ins.iter().find(|a| !Arc::ptr_eq(&a.state, &self.state)) {
            return Err(crate::error::Error::BackendMismatch {
                left: self.id.clone(),
                right: format!("{foreign:?}"),
            });
        }
        let metas: Vec<(&Shape, DType)> = ins.iter().map(|a| (&a.shape, a.dtype)).collect();
        let (shape, dtype) = op.infer(&metas)?;
        let mut g = self.state.lock();
        if g.nodes.len() >= MIN_AUTO_PRUNE.max(2 * g.pruned_size) {
            g.prune();
        }
        let id = g.next_id;
        g.next_id += 1;
        let input_ids: Vec<NodeId> = ins.iter().map(|a| a.node).collect();
        for i in &input_ids {
            g.nodes.get_mut(i).expect("input node alive").uses += 1;
        }
        g.nodes.insert(
            id,
            GraphNode {
                op: op.clone(),
                inputs: input_ids,
                shape: shape.clone(),
                dtype,
                value: None,
                handles: 1,
                uses: 0,
            },
        );
        Ok(Arc::new(DeferredAdapter {
            node: id,
            shape,
            dtype,
            state: self.state.clone(),
        }))
    }

    fn next_seed(&self) -> u64 {
        kernels::next_seed(&mut self.rng.lock().unwrap_or_else(|e| e.into_inner()))
    }

    fn set_seed(&self, seed: u64) {
        *self.rng.lock().unwrap_or_else(|e| e.into_inner()) = seed;
    }

    fn memory(&self) -> Option<&Arc<MemoryPool>> {
        Some(&self.state.pool)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
