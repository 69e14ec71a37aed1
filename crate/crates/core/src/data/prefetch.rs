use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use super::{Dataset, DatasetRef, Sample};
use crate::error::{Error, Result};

/// Loads samples on background threads ahead of demand.
///
/// Random access through [`Dataset::get`] is passed straight through; the
/// speed-up comes from [`PrefetchDataset::iter`], which keeps up to `buffer`
/// samples in flight and still delivers them in index order.
#[derive(Clone)]
pub struct PrefetchDataset {
    inner: DatasetRef,
    workers: usize,
    buffer: usize,
}

impl PrefetchDataset {
    pub fn new(inner: DatasetRef, workers: usize, buffer: usize) -> Result<Self> {
        if workers == 0 || buffer == 0 {
            return Err(Error::Config(
                "prefetch needs at least one worker and one buffer slot".into(),
            ));
        }
        Ok(PrefetchDataset { inner, workers, buffer })
    }

    pub fn iter(&self) -> PrefetchIter {
        PrefetchIter::start(self.inner.clone(), self.workers, self.buffer)
    }
}

impl Dataset for PrefetchDataset {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        self.inner.get(index)
    }
}

struct Queue {
    claimed: usize,
    delivered: usize,
    ready: BTreeMap<usize, Result<Sample>>,
    stop: bool,
}

struct Shared {
    queue: Mutex<Queue>,
    changed: Condvar,
}

impl Shared {
    fn lock(&self) -> std::sync::MutexGuard<'_, Queue> {
        self.queue.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// In-order iterator over a prefetching pipeline.
pub struct PrefetchIter {
    shared: Arc<Shared>,
    len: usize,
    threads: Vec<JoinHandle<()>>,
}

impl PrefetchIter {
    fn start(inner: DatasetRef, workers: usize, buffer: usize) -> Self {
        let len = inner.len();
        let shared = Arc::new(Shared {
            queue: Mutex::new(Queue {
                claimed: 0,
                delivered: 0,
                ready: BTreeMap::new(),
                stop: false,
            }),
            changed: Condvar::new(),
        });
        let threads = (0..workers.min(len.max(1)))
            .map(|_| {
                let shared = shared.clone();
                let inner = inner.clone();
                std::thread::spawn(move || worker(&shared, inner.as_ref(), buffer))
            })
            .collect();
        PrefetchIter { shared, len, threads }
    }
}

fn worker(shared: &Shared, inner: &dyn Dataset, buffer: usize) {
    let len = inner.len();
    loop {
        let index = {
            let mut q = shared.lock();
            while !q.stop && q.claimed < len && q.claimed >= q.delivered + buffer {
                q = shared.changed.wait(q).unwrap_or_else(|e| e.into_inner());
            }
            if q.stop || q.claimed >= len {
                return;
            }
            q.claimed += 1;
            q.claimed - 1
        };
        let sample = inner.get(index);
        shared.lock().ready.insert(index, sample);
        shared.changed.notify_all();
    }
}

impl Iterator for PrefetchIter {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut q = self.shared.lock();
        if q.delivered >= self.len {
            return None;
        }
        loop {
            let want = q.delivered;
            if let Some(sample) = q.ready.remove(&want) {
                q.delivered += 1;
                drop(q);
                self.shared.changed.notify_all();
                return Some(sample);
            }
            q = self.shared.changed.wait(q).unwrap_or_else(|e| e.into_inner());
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.len - self.shared.lock().delivered;
        (left, Some(left))
    }
}

impl Drop for PrefetchIter {
    fn drop(&mut self) {
        self.shared.lock().stop = true;
        self.shared.changed.notify_all();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{iter, TensorDataset, TransformDataset};
    use crate::tensor::Tensor;

    fn slow_squares(n: usize) -> DatasetRef {
        let x = Tensor::from_vec((0..n as i64).collect(), &[n]).unwrap();
        let base: DatasetRef = Arc::new(TensorDataset::new(vec![x]).unwrap());
        Arc::new(TransformDataset::new(base, |s| {
            let v = s[0].scalar::<i64>()?;
            std::thread::sleep(std::time::Duration::from_micros((v as u64 * 37) % 300));
            Ok(vec![s[0].mul(&s[0])?])
        }))
    }

    #[test]
    fn delivers_in_order_for_any_worker_count() {
        let ds = slow_squares(40);
        let expected: Vec<i64> = iter(ds.as_ref()).map(|s| s.unwrap()[0].scalar().unwrap()).collect();
        for (workers, buffer) in [(1, 1), (4, 4), (8, 2), (3, 64)] {
            let p = PrefetchDataset::new(ds.clone(), workers, buffer).unwrap();
            let got: Vec<i64> = p.iter().map(|s| s.unwrap()[0].scalar().unwrap()).collect();
            assert_eq!(got, expected, "workers={workers} buffer={buffer}");
        }
    }

    #[test]
    fn early_drop_stops_workers() {
        let p = PrefetchDataset::new(slow_squares(1000), 4, 8).unwrap();
        let mut it = p.iter();
        assert_eq!(it.next().unwrap().unwrap()[0].scalar::<i64>().unwrap(), 0);
        drop(it);
        assert!(PrefetchDataset::new(slow_squares(1), 0, 1).is_err());
    }

    #[test]
    fn errors_are_delivered_in_place() {
        let x = Tensor::from_vec(vec![0i64, 1, 2], &[3]).unwrap();
        let base: DatasetRef = Arc::new(TensorDataset::new(vec![x]).unwrap());
        let failing: DatasetRef = Arc::new(TransformDataset::new(base, |s| {
            if s[0].scalar::<i64>()? == 1 {
                Err(Error::Data("corrupt".into()))
            } else {
                Ok(s)
            }
        }));
        let out: Vec<bool> = PrefetchDataset::new(failing, 2, 2)
            .unwrap()
            .iter()
            .map(|r| r.is_ok())
            .collect();
        assert_eq!(out, vec![true, false, true]);
    }
}
