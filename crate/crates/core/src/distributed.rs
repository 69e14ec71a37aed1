//! Collective communication between in-process ranks.
//!
//! Ranks find each other through a [`Rendezvous`] and receive a
//! [`Communicator`], which implements [`Collectives`]. All collectives are
//! synchronous: every rank must issue the same collectives in the same
//! order. Reductions use a ring, so the reduction order is fixed by ring
//! position and results are bit-identical on every rank.

use std::cell::Cell;
use std::collections::HashMap;
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, LazyLock, Mutex};
use std::time::{Duration, Instant};

use crate::autograd::Variable;
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::op::HostBuffer;
use crate::tensor::Tensor;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
}

pub trait Collectives {
    fn rank(&self) -> usize;
    fn world_size(&self) -> usize;
    /// Elementwise reduction across ranks; every rank receives the result.
    fn all_reduce(&self, tensor: &Tensor, op: ReduceOp) -> Result<Tensor>;
    /// Stacks every rank's tensor along a new leading axis, in rank order.
    fn all_gather(&self, tensor: &Tensor) -> Result<Tensor>;
    /// Every rank receives `root`'s tensor.
    fn broadcast(&self, tensor: &Tensor, root: usize) -> Result<Tensor>;
    /// Returns only once every rank has arrived.
    fn barrier(&self) -> Result<()>;
}

pub trait Rendezvous {
    /// Blocks until `world_size` participants have joined; ranks are dense
    /// and unique.
    fn join(&self, world_size: usize) -> Result<Communicator>;
}

enum Message {
    Meta(Vec<usize>, DType),
    Data(HostBuffer),
    Token,
}

struct Endpoints {
    to: Vec<Sender<Message>>,
    from: Vec<Receiver<Message>>,
}

struct GroupState {
    joined: usize,
    endpoints: Vec<Option<Endpoints>>,
}

struct Group {
    world_size: usize,
    state: Mutex<GroupState>,
    complete: Condvar,
}

static GROUPS: LazyLock<Mutex<HashMap<String, Arc<Group>>>> = LazyLock::new(Default::default);

/// Rendezvous between threads of this process that share an id.
#[derive(Debug, Clone)]
pub struct LocalRendezvous {
    id: String,
    timeout: Duration,
}

impl LocalRendezvous {
    pub fn new(id: impl Into<String>) -> Self {
        LocalRendezvous {
            id: id.into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    /// Applies both to joining and to every collective of the result.
    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

fn endpoints(n: usize) -> Vec<Option<Endpoints>> {
    let mut inboxes: Vec<Vec<Option<Receiver<Message>>>> = (0..n).map(|_| (0..n).map(|_| None).collect()).collect();
    let mut outboxes: Vec<Vec<Sender<Message>>> = Vec::with_capacity(n);
    for src in 0..n {
        let mut to = Vec::with_capacity(n);
        for inbox in inboxes.iter_mut() {
            let (tx, rx) = channel();
            to.push(tx);
            inbox[src] = Some(rx);
        }
        outboxes.push(to);
    }
    outboxes
        .into_iter()
        .zip(inboxes)
        .map(|(to, from)| {
            Some(Endpoints {
                to,
                from: from.into_iter().map(|r| r.expect("every pair has a channel")).collect(),
            })
        })
        .collect()
}

impl Rendezvous for LocalRendezvous {
    fn join(&self, world_size: usize) -> Result<Communicator> {
        if world_size == 0 {
            return Err(Error::Rendezvous("world size must be at least 1".into()));
        }
        let (group, rank, ends) = {
            let mut groups = GROUPS.lock().unwrap_or_else(|e| e.into_inner());
            let group = groups
                .entry(self.id.clone())
                .or_insert_with(|| {
                    Arc::new(Group {
                        world_size,
                        state: Mutex::new(GroupState {
                            joined: 0,
                            endpoints: endpoints(world_size),
                        }),
                        complete: Condvar::new(),
                    })
                })
                .clone();
            if group.world_size != world_size {
                return Err(Error::Rendezvous(format!(
                    "group `{}` has world size {}, joiner asked for {world_size}",
                    self.id, group.world_size
                )));
            }
            let mut st = group.state.lock().unwrap_or_else(|e| e.into_inner());
            let rank = st.joined;
            st.joined += 1;
            let ends = st.endpoints[rank].take().expect("each rank is handed out once");
            if st.joined == world_size {
                groups.remove(&self.id);
            }
            drop(st);
            (group, rank, ends)
        };
        group.complete.notify_all();
        let deadline = Instant::now() + self.timeout;
        let mut st = group.state.lock().unwrap_or_else(|e| e.into_inner());
        while st.joined < world_size {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                let joined = st.joined;
                drop(st);
                let mut groups = GROUPS.lock().unwrap_or_else(|e| e.into_inner());
                if groups.get(&self.id).is_some_and(|g| Arc::ptr_eq(g, &group)) {
                    groups.remove(&self.id);
                }
                return Err(Error::Rendezvous(format!(
                    "only {joined} of {world_size} ranks joined `{}` within {:?}",
                    self.id, self.timeout
                )));
            }
            st = group
                .complete
                .wait_timeout(st, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        Ok(Communicator {
            rank,
            world_size,
            ends,
            timeout: self.timeout,
            broken: Cell::new(false),
        })
    }
}

/// One rank's handle on its group.
///
/// After a timeout or a peer failure the communicator refuses further
/// collectives, since queued messages can no longer be matched up.
pub struct Communicator {
    rank: usize,
    world_size: usize,
    ends: Endpoints,
    timeout: Duration,
    broken: Cell<bool>,
}

impl std::fmt::Debug for Communicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Communicator(rank {} of {})", self.rank, self.world_size)
    }
}

impl Communicator {
    fn send(&self, to: usize, m: Message) -> Result<()> {
        self.ends.to[to]
            .send(m)
            .map_err(|_| self.fail(Error::Rendezvous(format!("rank {to} left the group"))))
    }

    fn recv(&self, from: usize) -> Result<Message> {
        match self.ends.from[from].recv_timeout(self.timeout) {
            Ok(m) => Ok(m),
            Err(RecvTimeoutError::Timeout) => Err(self.fail(Error::CollectiveTimeout(self.timeout))),
            Err(RecvTimeoutError::Disconnected) => {
                Err(self.fail(Error::Rendezvous(format!("rank {from} left the group"))))
            }
        }
    }

    fn recv_data(&self, from: usize) -> Result<HostBuffer> {
        match self.recv(from)? {
            Message::Data(h) => Ok(h),
            _ => Err(self.fail(Error::Rendezvous(format!("unexpected message from rank {from}")))),
        }
    }

    fn fail(&self, e: Error) -> Error {
        self.broken.set(true);
        e
    }

    fn check_usable(&self) -> Result<()> {
        if self.broken.get() {
            return Err(Error::Rendezvous(
                "communicator unusable after an earlier failure".into(),
            ));
        }
        Ok(())
    }

    fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.world_size).filter(move |&p| p != self.rank)
    }

    /// Exchanges shape and dtype with every peer; all ranks reach the same
    /// verdict so a disagreement fails everywhere without deadlock.
    fn agree(&self, t: &Tensor) -> Result<()> {
        self.check_usable()?;
        for p in self.peers() {
            self.send(p, Message::Meta(t.dims().to_vec(), t.dtype()))?;
        }
        let mut metas = vec![(t.dims().to_vec(), t.dtype()); self.world_size];
        for p in self.peers() {
            match self.recv(p)? {
                Message::Meta(d, dt) => metas[p] = (d, dt),
                _ => return Err(self.fail(Error::Rendezvous(format!("unexpected message from rank {p}")))),
            }
        }
        if let Some(p) = metas.iter().position(|m| *m != metas[0]) {
            return Err(Error::CollectiveShape(format!(
                "rank 0 has {} {:?}, rank {p} has {} {:?}",
                metas[0].1, metas[0].0, metas[p].1, metas[p].0
            )));
        }
        Ok(())
    }
}

impl Collectives for Communicator {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.world_size
    }

    fn all_reduce(&self, tensor: &Tensor, op: ReduceOp) -> Result<Tensor> {
        self.agree(tensor)?;
        let (n, r) = (self.world_size, self.rank);
        let len = tensor.numel();
        if n == 1 || len == 0 {
            return Ok(tensor.clone());
        }
        let flat = tensor.reshape(&[len])?;
        let mut chunks: Vec<Tensor> = (0..n)
            .map(|i| flat.narrow(0, i * len / n, (i + 1) * len / n - i * len / n))
            .collect::<Result<_>>()?;
        let factory = tensor.factory();
        let (right, left) = ((r + 1) % n, (r + n - 1) % n);
        for s in 0..n - 1 {
            let (out, inc) = ((r + n - s) % n, (r + 2 * n - s - 1) % n);
            self.send(right, Message::Data(chunks[out].to_host()?))?;
            let got = factory.from_host(self.recv_data(left)?)?;
            chunks[inc] = match op {
                ReduceOp::Sum => got.add(&chunks[inc])?,
                ReduceOp::Max => got.maximum(&chunks[inc])?,
            };
        }
        for s in 0..n - 1 {
            let (out, inc) = ((r + 1 + n - s) % n, (r + n - s) % n);
            self.send(right, Message::Data(chunks[out].to_host()?))?;
            chunks[inc] = factory.from_host(self.recv_data(left)?)?;
        }
        Tensor::concat(&chunks.iter().collect::<Vec<_>>(), 0)?.reshape(tensor.dims())
    }

    fn all_gather(&self, tensor: &Tensor) -> Result<Tensor> {
        self.agree(tensor)?;
        let host = tensor.to_host()?;
        for p in self.peers() {
            self.send(p, Message::Data(host.clone()))?;
        }
        let factory = tensor.factory();
        let parts: Vec<Tensor> = (0..self.world_size)
            .map(|p| {
                if p == self.rank {
                    Ok(tensor.clone())
                } else {
                    factory.from_host(self.recv_data(p)?)
                }
            })
            .collect::<Result<_>>()?;
        Tensor::stack(&parts.iter().collect::<Vec<_>>())
    }

    fn broadcast(&self, tensor: &Tensor, root: usize) -> Result<Tensor> {
        if root >= self.world_size {
            return Err(Error::Rendezvous(format!(
                "root {root} outside world of {}",
                self.world_size
            )));
        }
        self.agree(tensor)?;
        if self.rank == root {
            let host = tensor.to_host()?;
            for p in self.peers() {
                self.send(p, Message::Data(host.clone()))?;
            }
            Ok(tensor.clone())
        } else {
            tensor.factory().from_host(self.recv_data(root)?)
        }
    }

    fn barrier(&self) -> Result<()> {
        self.check_usable()?;
        for p in self.peers() {
            self.send(p, Message::Token)?;
        }
        for p in self.peers() {
            if !matches!(self.recv(p)?, Message::Token) {
                return Err(self.fail(Error::Rendezvous(format!("unexpected message from rank {p}"))));
            }
        }
        Ok(())
    }
}

/// Replaces every parameter gradient by its mean across ranks.
pub fn data_parallel_sync(comm: &dyn Collectives, params: &[Variable]) -> Result<()> {
    let grads: Vec<Tensor> = params
        .iter()
        .enumerate()
        .map(|(i, p)| p.grad().ok_or(Error::MissingGradient(i)))
        .collect::<Result<_>>()?;
    let n = comm.world_size();
    if n == 1 || grads.is_empty() {
        return Ok(());
    }
    let scale = 1.0 / n as f64;
    let dtype = grads[0].dtype();
    if grads.iter().any(|g| g.dtype() != dtype) {
        for (p, g) in params.iter().zip(&grads) {
            p.set_grad(Some(comm.all_reduce(g, ReduceOp::Sum)?.mul_scalar(scale)?));
        }
        return Ok(());
    }
    // One fused buffer keeps the message count independent of model depth.
    let flat: Vec<Tensor> = grads.iter().map(|g| g.reshape(&[g.numel()])).collect::<Result<_>>()?;
    let reduced = comm
        .all_reduce(&Tensor::concat(&flat.iter().collect::<Vec<_>>(), 0)?, ReduceOp::Sum)?
        .mul_scalar(scale)?;
    let mut offset = 0;
    for (p, g) in params.iter().zip(&grads) {
        p.set_grad(Some(reduced.narrow(0, offset, g.numel())?.reshape(g.dims())?));
        offset += g.numel();
    }
    Ok(())
}

/// Runs `f` on `world_size` threads joined through a fresh local group and
/// returns the per-rank results in rank order.
pub fn run_local<R: Send>(
    world_size: usize,
    rendezvous: &LocalRendezvous,
    f: impl Fn(Communicator) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let backend = crate::backend::default_backend();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..world_size)
            .map(|_| {
                let backend = backend.clone();
                let f = &f;
                s.spawn(move || {
                    crate::backend::with_default(backend, || {
                        let comm = rendezvous.join(world_size)?;
                        let rank = comm.rank();
                        f(comm).map(|r| (rank, r))
                    })
                })
            })
            .collect();
        let mut out: Vec<(usize, R)> = Vec::with_capacity(world_size);
        let mut first_error = None;
        for h in handles {
            match h.join() {
                Ok(Ok(r)) => out.push(r),
                Ok(Err(e)) => {
                    first_error.get_or_insert(e);
                }
                Err(panic) => std::panic::resume_unwind(panic),
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }
        out.sort_by_key(|(rank, _)| *rank);
        Ok(out.into_iter().map(|(_, r)| r).collect())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU64, Ordering};

    static NEXT: AtomicU64 = AtomicU64::new(0);

    fn group() -> LocalRendezvous {
        LocalRendezvous::new(format!("unit-{}", NEXT.fetch_add(1, Ordering::Relaxed))).timeout(Duration::from_secs(10))
    }

    #[test]
    fn scalar_sum_reaches_every_rank() {
        let out = run_local(4, &group(), |c| {
            let t = Tensor::scalar_value(c.rank() as f64 + 1.0, DType::F32)?;
            c.all_reduce(&t, ReduceOp::Sum)?.item()
        })
        .unwrap();
        assert_eq!(out, vec![10.0; 4]);
    }

    #[test]
    fn max_and_uneven_chunks() {
        let out = run_local(3, &group(), |c| {
            let v: Vec<f64> = (0..5).map(|i| ((i * 7 + c.rank() * 3) % 11) as f64).collect();
            c.all_reduce(&Tensor::from_vec(v, &[5])?, ReduceOp::Max)?.to_f64_vec()
        })
        .unwrap();
        let oracle: Vec<f64> = (0..5)
            .map(|i| (0..3).map(|r| ((i * 7 + r * 3) % 11) as f64).fold(f64::MIN, f64::max))
            .collect();
        assert!(out.iter().all(|o| *o == oracle));
    }

    #[test]
    fn single_rank_is_identity() {
        let out = run_local(1, &group(), |c| {
            let t = Tensor::from_vec(vec![1.5f32, 2.5], &[2])?;
            Ok((
                c.all_reduce(&t, ReduceOp::Sum)?.to_vec::<f32>()?,
                c.all_gather(&t)?.dims().to_vec(),
            ))
        })
        .unwrap();
        assert_eq!(out[0], (vec![1.5, 2.5], vec![1, 2]));
    }

    #[test]
    fn gather_in_rank_order() {
        let out = run_local(3, &group(), |c| {
            let t = Tensor::from_vec(vec![c.rank() as i64], &[1])?;
            let g = c.all_gather(&t)?;
            Ok((g.dims().to_vec(), g.to_vec::<i64>()?))
        })
        .unwrap();
        for (dims, v) in out {
            assert_eq!(dims, vec![3, 1]);
            assert_eq!(v, vec![0, 1, 2]);
        }
    }

    #[test]
    fn broadcast_from_root() {
        let out = run_local(4, &group(), |c| {
            let t = Tensor::full(&[2], DType::F64, c.rank() as f64)?;
            c.broadcast(&t, 2)?.to_f64_vec()
        })
        .unwrap();
        assert!(out.iter().all(|v| *v == vec![2.0, 2.0]));
    }

    #[test]
    fn shape_disagreement_fails_on_every_rank() {
        let g = group();
        let results: Vec<Result<Tensor>> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..3)
                .map(|_| {
                    s.spawn(|| {
                        let c = g.join(3)?;
                        let n = if c.rank() == 1 { 3 } else { 2 };
                        c.all_reduce(&Tensor::zeros(&[n], DType::F32)?, ReduceOp::Sum)
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(results.iter().all(|r| matches!(r, Err(Error::CollectiveShape(_)))));
    }

    #[test]
    fn absent_rank_times_out() {
        let g = group().timeout(Duration::from_millis(100));
        let results: Vec<Result<()>> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..2)
                .map(|_| {
                    s.spawn(|| {
                        let c = g.join(2)?;
                        if c.rank() == 0 {
                            c.all_reduce(&Tensor::zeros(&[4], DType::F32)?, ReduceOp::Sum)
                                .map(|_| ())
                        } else {
                            std::thread::sleep(Duration::from_millis(400));
                            Ok(())
                        }
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(matches!(results[0], Err(Error::CollectiveTimeout(_))));
    }

    #[test]
    fn rendezvous_assigns_dense_ranks() {
        let mut ranks = run_local(6, &group(), |c| Ok(c.rank())).unwrap();
        ranks.sort_unstable();
        assert_eq!(ranks, (0..6).collect::<Vec<_>>());
        let lonely = group().timeout(Duration::from_millis(50));
        assert!(matches!(lonely.join(2), Err(Error::Rendezvous(_))));
    }

    #[test]
    fn barrier_orders_events() {
        let arrivals = Mutex::new(Vec::new());
        let departures = Mutex::new(Vec::new());
        run_local(4, &group(), |c| {
            std::thread::sleep(Duration::from_millis(10 * c.rank() as u64));
            arrivals.lock().unwrap().push(Instant::now());
            c.barrier()?;
            departures.lock().unwrap().push(Instant::now());
            Ok(())
        })
        .unwrap();
        let last_in = *arrivals.lock().unwrap().iter().max().unwrap();
        assert!(departures.lock().unwrap().iter().all(|&d| d >= last_in));
    }

    #[test]
    fn sync_averages_gradients() {
        let out = run_local(2, &group(), |c| {
            let p = Variable::new(Tensor::zeros(&[2], DType::F32)?, true);
            let q = Variable::new(Tensor::zeros(&[], DType::F32)?, true);
            let g = 1.0 + 2.0 * c.rank() as f64;
            p.set_grad(Some(Tensor::full(&[2], DType::F32, g)?));
            q.set_grad(Some(Tensor::full(&[], DType::F32, -g)?));
            data_parallel_sync(&c, &[p.clone(), q.clone()])?;
            Ok((p.grad().unwrap().to_f64_vec()?, q.grad().unwrap().item()?))
        })
        .unwrap();
        assert!(out.iter().all(|(p, q)| *p == vec![2.0, 2.0] && *q == -2.0));
    }
}
