use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use kindling::backend::{self, BackendRef, DeferredBackend, EagerBackend};
use kindling::memory::{AllocatorStats, MemoryManager, MemoryPool, Policy};

use crate::config::BackendChoice;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// A private backend and memory pool for one command.
pub struct Session {
    pub backend: BackendRef,
    pub pool: Arc<MemoryPool>,
    deferred: Option<Arc<DeferredBackend>>,
}

impl Session {
    pub fn new(choice: BackendChoice, policy: Policy) -> Self {
        Self::with_manager(choice, policy.manager())
    }

    pub fn with_manager(choice: BackendChoice, manager: Box<dyn MemoryManager>) -> Self {
        let pool = MemoryPool::new(manager);
        let n = NEXT_ID.fetch_add(1, Ordering::Relaxed);
        match choice {
            BackendChoice::Eager => Session {
                backend: Arc::new(EagerBackend::with_pool(format!("cli-eager-{n}"), pool.clone())),
                pool,
                deferred: None,
            },
            BackendChoice::Deferred => {
                let d = Arc::new(DeferredBackend::with_pool(format!("cli-deferred-{n}"), pool.clone()));
                Session {
                    backend: d.clone(),
                    pool,
                    deferred: Some(d),
                }
            }
        }
    }

    /// Runs `f` with this session's backend as the default.
    pub fn run<R>(&self, f: impl FnOnce() -> R) -> R {
        backend::with_default(self.backend.clone(), f)
    }

    pub fn deferred(&self) -> Option<&Arc<DeferredBackend>> {
        self.deferred.as_ref()
    }

    /// Drops graph nodes nothing refers to any more.
    pub fn settle(&self) {
        if let Some(d) = &self.deferred {
            d.prune_unreferenced();
        }
    }

    pub fn memory_stats(&self) -> AllocatorStats {
        self.pool.stats()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kindling::{DType, Tensor};

    #[test]
    fn sessions_are_isolated() {
        let a = Session::new(BackendChoice::Eager, Policy::Caching);
        let b = Session::new(BackendChoice::Deferred, Policy::Native);
        assert_ne!(a.backend.id(), b.backend.id());
        let t = a.run(|| Tensor::ones(&[4], DType::F32).unwrap());
        assert_eq!(t.backend_id(), a.backend.id());
        assert!(a.memory_stats().live_bytes_requested > 0);
        drop(t);
        assert_eq!(a.memory_stats().live_bytes_requested, 0);
        assert!(b.deferred().is_some() && a.deferred().is_none());
    }
}
