//! The two-part backend interface and the global backend registry.
//!
//! A [`Backend`] executes primitive [`Op`]s; the per-tensor state it
//! produces is a [`TensorAdapter`]. Every user-facing operator in the
//! library funnels through [`dispatch`], so swapping the default backend
//! reroutes everything built on top of it.

mod counting;
pub mod deferred;
pub mod eager;

use std::any::Any;
use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::memory::MemoryPool;
use crate::op::{HostBuffer, Op};
use crate::shape::Shape;
use crate::tensor::Tensor;

pub use counting::CountingBackend;
pub use deferred::DeferredBackend;
pub use eager::EagerBackend;

/// Backend-owned state attached to one tensor.
pub trait TensorAdapter: Send + Sync + fmt::Debug {
    fn shape(&self) -> &Shape;
    fn dtype(&self) -> DType;
    /// Row-major values; forces materialization on lazy backends.
    fn to_host(&self) -> Result<HostBuffer>;
    /// Computes a lazy value in place; a no-op for eager adapters.
    fn materialize(&self) -> Result<()> {
        Ok(())
    }
    fn as_any(&self) -> &dyn Any;
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    /// Runs one primitive. Inputs are already checked to share this backend.
    fn execute(&self, op: &Op, inputs: &[&Tensor]) -> Result<Arc<dyn TensorAdapter>>;

    /// Draws a fresh seed for a random-creation primitive.
    fn next_seed(&self) -> u64;

    fn set_seed(&self, seed: u64);

    fn memory(&self) -> Option<&Arc<MemoryPool>> {
        None
    }

    fn as_any(&self) -> &dyn Any;
}

impl fmt::Debug for dyn Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Backend({})", self.id())
    }
}

pub type BackendRef = Arc<dyn Backend>;

struct Registry {
    backends: HashMap<String, BackendRef>,
    default: String,
}

fn registry() -> &'static RwLock<Registry> {
    static REGISTRY: OnceLock<RwLock<Registry>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut backends: HashMap<String, BackendRef> = HashMap::new();
        backends.insert("eager".into(), Arc::new(EagerBackend::new("eager")));
        backends.insert("deferred".into(), Arc::new(DeferredBackend::new("deferred")));
        RwLock::new(Registry {
            backends,
            default: "eager".into(),
        })
    })
}

/// Adds a backend under its id.
pub fn register(backend: BackendRef) -> Result<()> {
    let mut r = registry().write().unwrap_or_else(|e| e.into_inner());
    let id = backend.id().to_string();
    if r.backends.contains_key(&id) {
        return Err(Error::DuplicateBackend(id));
    }
    r.backends.insert(id, backend);
    Ok(())
}

pub fn get(id: &str) -> Result<BackendRef> {
    let r = registry().read().unwrap_or_else(|e| e.into_inner());
    r.backends
        .get(id)
        .cloned()
        .ok_or_else(|| Error::UnknownBackend(id.to_string()))
}

/// Makes a registered backend the process-wide default.
pub fn set_default(id: &str) -> Result<()> {
    let mut r = registry().write().unwrap_or_else(|e| e.into_inner());
    if !r.backends.contains_key(id) {
        return Err(Error::UnknownBackend(id.to_string()));
    }
    r.default = id.to_string();
    Ok(())
}

thread_local! {
    static SCOPED: RefCell<Vec<BackendRef>> = const { RefCell::new(Vec::new()) };
    static DISPATCH_LOG: RefCell<Option<Vec<&'static str>>> = const { RefCell::new(None) };
}

/// The backend new tensors are created on: the innermost
/// [`with_default`] scope on this thread, else the registry default.
pub fn default_backend() -> BackendRef {
    if let Some(b) = SCOPED.with(|s| s.borrow().last().cloned()) {
        return b;
    }
    let r = registry().read().unwrap_or_else(|e| e.into_inner());
    r.backends[&r.default].clone()
}

/// Runs `f` with `backend` as this thread's default.
pub fn with_default<R>(backend: BackendRef, f: impl FnOnce() -> R) -> R {
    struct Pop;
    impl Drop for Pop {
        fn drop(&mut self) {
            SCOPED.with(|s| s.borrow_mut().pop());
        }
    }
    SCOPED.with(|s| s.borrow_mut().push(backend));
    let _pop = Pop;
    f()
}

/// Runs `f` and returns the primitive names dispatched on this thread.
pub fn record_dispatches<R>(f: impl FnOnce() -> R) -> (R, Vec<&'static str>) {
    let outer = DISPATCH_LOG.with(|l| l.borrow_mut().replace(Vec::new()));
    let r = f();
    let log = DISPATCH_LOG.with(|l| std::mem::replace(&mut *l.borrow_mut(), outer));
    (r, log.unwrap_or_default())
}

/// The single entry point from tensors into backends.
pub fn dispatch(backend: &BackendRef, op: Op, inputs: &[&Tensor]) -> Result<Tensor> {
    for t in inputs {
        if t.backend().id() != backend.id() {
            return Err(Error::BackendMismatch {
                left: backend.id().to_string(),
                right: t.backend().id().to_string(),
            });
        }
    }
    DISPATCH_LOG.with(|l| {
        if let Some(log) = l.borrow_mut().as_mut() {
            log.push(op.primitive_name());
        }
    });
    let adapter = backend.execute(&op, inputs)?;
    Ok(Tensor::from_parts(adapter, backend.clone()))
}

/// Downcasts every input adapter to the concrete type a backend expects.
pub(crate) fn adapters<'a, A: 'static>(backend: &str, inputs: &[&'a Tensor]) -> Result<Vec<&'a A>> {
    inputs
        .iter()
        .map(|t| {
            t.adapter()
                .as_any()
                .downcast_ref::<A>()
                .ok_or_else(|| Error::BackendMismatch {
                    left: backend.to_string(),
                    right: format!("{:?}", t.adapter()),
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_errors() {
        assert_eq!(
            get("nonexistent").unwrap_err(),
            Error::UnknownBackend("nonexistent".into())
        );
        assert!(matches!(set_default("nonexistent"), Err(Error::UnknownBackend(_))));
        let dup = register(Arc::new(EagerBackend::new("eager")));
        assert_eq!(dup, Err(Error::DuplicateBackend("eager".into())));
    }

    #[test]
    fn scoped_default_nests_and_restores() {
        let outer = default_backend().id().to_string();
        let d = get("deferred").unwrap();
        with_default(d, || {
            assert_eq!(default_backend().id(), "deferred");
            let e: BackendRef = Arc::new(EagerBackend::new("scoped"));
            with_default(e, || assert_eq!(default_backend().id(), "scoped"));
            assert_eq!(default_backend().id(), "deferred");
        });
        assert_eq!(default_backend().id(), outer);
    }
}
