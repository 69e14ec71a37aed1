//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! Every differentiable operation on [`Variable`]s records a closure that
//! maps the output gradient to input gradients. [`Variable::backward`]
//! walks the recorded graph in reverse creation order.

mod custom;
mod functions;
mod gradcheck;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use crate::error::{Error, Result};
use crate::shape::Shape;
use crate::tensor::Tensor;

pub use custom::CustomOp;
pub use gradcheck::{gradcheck, GradcheckReport};

type BackwardFn = dyn Fn(&Tensor) -> Result<Vec<Option<Tensor>>> + Send + Sync;

struct GradFn {
    name: &'static str,
    inputs: Vec<Variable>,
    backward: Box<BackwardFn>,
}

struct VarNode {
    id: u64,
    data: RwLock<Tensor>,
    grad: Mutex<Option<Tensor>>,
    requires_grad: bool,
    grad_fn: Mutex<Option<GradFn>>,
    /// Set once the node's grad_fn has been released by a backward pass.
    consumed: AtomicBool,
}

/// A tensor that may participate in gradient computation.
#[derive(Clone)]
pub struct Variable(Arc<VarNode>);

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NODES_RECORDED: Cell<u64> = const { Cell::new(0) };
}

/// Runs `f` without recording any operations.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(prev);
    f()
}

/// Operations recorded on this thread so far.
pub fn nodes_recorded() -> u64 {
    NODES_RECORDED.with(|n| n.get())
}

impl fmt::Debug for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.op_name().unwrap_or("leaf");
        write!(f, "Variable#{}({:?}, {op})", self.0.id, self.tensor())
    }
}

impl Variable {
    fn from_node(data: Tensor, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        Variable(Arc::new(VarNode {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            grad_fn: Mutex::new(grad_fn),
            consumed: AtomicBool::new(false),
        }))
    }

    pub fn new(data: Tensor, requires_grad: bool) -> Self {
        Self::from_node(data, requires_grad, None)
    }

    /// A leaf that never receives gradients.
    pub fn constant(data: Tensor) -> Self {
        Self::new(data, false)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn tensor(&self) -> Tensor {
        self.0.data.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn shape(&self) -> Shape {
        self.tensor().shape().clone()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.tensor().dims().to_vec()
    }

    /// Replaces the value in place, e.g. for optimizer updates.
    pub fn set_data(&self, data: Tensor) {
        *self.0.data.write().unwrap_or_else(|e| e.into_inner()) = data;
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.lock_fn().is_none() && !self.0.consumed.load(Ordering::Acquire)
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.lock_fn().as_ref().map(|f| f.name)
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn set_grad(&self, grad: Option<Tensor>) {
        *self.0.grad.lock().unwrap_or_else(|e| e.into_inner()) = grad;
    }

    pub fn zero_grad(&self) {
        self.set_grad(None);
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Variable {
        Variable::constant(self.tensor())
    }

    fn lock_fn(&self) -> std::sync::MutexGuard<'_, Option<GradFn>> {
        self.0.grad_fn.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Records an operation result. Inputs that do not require gradients
    /// (or a disabled tape) yield a constant.
    pub(crate) fn record(
        data: Tensor,
        name: &'static str,
        inputs: &[&Variable],
        backward: impl Fn(&Tensor) -> Result<Vec<Option<Tensor>>> + Send + Sync + 'static,
    ) -> Variable {
        let enabled = GRAD_ENABLED.with(|g| g.get());
        if !enabled || !inputs.iter().any(|v| v.requires_grad()) {
            return Variable::constant(data);
        }
        NODES_RECORDED.with(|n| n.set(n.get() + 1));
        let grad_fn = GradFn {
            name,
            inputs: inputs.iter().map(|v| (*v).clone()).collect(),
            backward: Box::new(backward),
        };
        Variable::from_node(data, true, Some(grad_fn))
    }

    /// Accumulates d(self)/d(leaf) into every reachable leaf's `grad`.
    /// A non-scalar output needs an explicit seed gradient.
    pub fn backward(&self, seed: Option<&Tensor>, retain_graph: bool) -> Result<()> {
        let t = self.tensor();
        let seed = match seed {
            Some(s) => {
                if s.shape() != t.shape() {
                    return Err(Error::GradShape {
                        op: "seed".into(),
                        expected: t.shape().to_string(),
                        got: s.shape().to_string(),
                    });
                }
                s.clone()
            }
            None if t.numel() == 1 => t.ones_like()?,
            None => return Err(Error::SeedRequired),
        };
        if self.0.consumed.load(Ordering::Acquire) {
            return Err(Error::TapeConsumed);
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.reverse_topological()?;
        let mut grads: HashMap<u64, Tensor> = HashMap::new();
        grads.insert(self.id(), seed);
        for var in &order {
            let Some(g) = grads.remove(&var.id()) else {
                continue;
            };
            let guard = var.lock_fn();
            let Some(f) = guard.as_ref() else {
                drop(guard);
                let mut slot = var.0.grad.lock().unwrap_or_else(|e| e.into_inner());
                *slot = Some(match slot.take() {
                    Some(prev) => prev.add(&g)?,
                    None => g,
                });
                continue;
            };
            let input_grads = (f.backward)(&g)?;
            for (input, ig) in f.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                let expected = input.shape();
                if *ig.shape() != expected {
                    return Err(Error::GradShape {
                        op: f.name.into(),
                        expected: expected.to_string(),
                        got: ig.shape().to_string(),
                    });
                }
                let acc = match grads.remove(&input.id()) {
                    Some(prev) => prev.add(&ig)?,
                    None => ig,
                };
                grads.insert(input.id(), acc);
            }
        }
        if !retain_graph {
            for var in &order {
                let mut guard = var.lock_fn();
                if guard.take().is_some() {
                    var.0.consumed.store(true, Ordering::Release);
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable through grad-requiring edges, newest first.
    fn reverse_topological(&self) -> Result<Vec<Variable>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.id()) {
                continue;
            }
            {
                let guard = v.lock_fn();
                match guard.as_ref() {
                    Some(f) => stack.extend(f.inputs.iter().filter(|i| i.requires_grad()).cloned()),
                    None if v.0.consumed.load(Ordering::Acquire) => return Err(Error::TapeConsumed),
                    None => {}
                }
            }
            out.push(v);
        }
        out.sort_by_key(|v| std::cmp::Reverse(v.id()));
        Ok(out)
    }
}
