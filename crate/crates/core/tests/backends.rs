use std::sync::Arc;

use kindling::backend::{self, BackendRef, CountingBackend, DeferredBackend, EagerBackend};
use kindling::memory::MemoryPool;
use kindling::testing::{compare, Program};
use kindling::{DType, Error, Tensor};

fn eager_with_pool() -> (BackendRef, Arc<MemoryPool>) {
    let pool = MemoryPool::native();
    (Arc::new(EagerBackend::with_pool("eager-test", pool.clone())), pool)
}

fn deferred_with_pool() -> (Arc<DeferredBackend>, Arc<MemoryPool>) {
    let pool = MemoryPool::native();
    (
        Arc::new(DeferredBackend::with_pool("deferred-test", pool.clone())),
        pool,
    )
}

fn ulps(a: f32, b: f32) -> u32 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs() as u32
}

#[test]
fn eager_allocates_once_per_op() {
    let (b, pool) = eager_with_pool();
    let x = Tensor::on(&b).from_vec(vec![0.5f32, 1.0, 2.0], &[3]).unwrap();
    let before = pool.stats().alloc_count;
    let y = x.exp().unwrap().neg().unwrap().abs().unwrap();
    assert_eq!(pool.stats().alloc_count - before, 3);
    let want: Vec<f32> = [0.5f32, 1.0, 2.0].iter().map(|v| v.exp()).collect();
    for (got, want) in y.to_vec::<f32>().unwrap().into_iter().zip(want) {
        assert!(ulps(got, want) <= 4, "{got} vs {want}");
    }
}

#[test]
fn deferred_records_without_allocating() {
    let (d, pool) = deferred_with_pool();
    let b: BackendRef = d.clone();
    let x = Tensor::on(&b).from_vec(vec![0.1f32, 0.2, 0.3, 0.4], &[4]).unwrap();
    let nodes = d.node_count();
    let allocs = pool.stats().alloc_count;
    let mut y = x.clone();
    for _ in 0..10 {
        y = y.sin().unwrap();
    }
    assert_eq!(d.node_count() - nodes, 10);
    assert_eq!(pool.stats().alloc_count, allocs);
    let host = y.to_vec::<f32>().unwrap();
    let mut oracle = vec![0.1f32, 0.2, 0.3, 0.4];
    for _ in 0..10 {
        oracle.iter_mut().for_each(|v| *v = v.sin());
    }
    assert_eq!(host, oracle);
    assert_eq!(d.stats().fused_kernels, 1);
}

#[test]
fn fusion_saves_an_allocation() {
    let (e, epool) = eager_with_pool();
    let (d, dpool) = deferred_with_pool();
    let dref: BackendRef = d.clone();
    let mut results = Vec::new();
    for (b, pool) in [(&e, &epool), (&dref, &dpool)] {
        let f = Tensor::on(b);
        let x = f.from_vec(vec![1.0f32, 2.0, 3.0], &[3]).unwrap();
        let one = f.ones(&[3], DType::F32).unwrap();
        x.to_host().unwrap();
        one.to_host().unwrap();
        let before = pool.stats().alloc_count;
        let y = x.add(&one).unwrap().exp().unwrap();
        let host = y.to_vec::<f32>().unwrap();
        results.push((pool.stats().alloc_count - before, host));
    }
    assert_eq!(results[0].0, 2);
    assert_eq!(results[1].0, 1);
    assert_eq!(results[0].1, results[1].1);
}

#[test]
fn materialized_values_are_cached() {
    let (d, _) = deferred_with_pool();
    let b: BackendRef = d.clone();
    let x = Tensor::on(&b).from_vec(vec![1.0f64, 4.0], &[2]).unwrap();
    let y = x.sqrt().unwrap().mul_scalar(3.0).unwrap();
    y.to_host().unwrap();
    let evals = d.stats().evaluations;
    assert_eq!(y.to_vec::<f64>().unwrap(), vec![3.0, 6.0]);
    assert_eq!(d.stats().evaluations, evals);
}

#[test]
fn pruning_keeps_reachable_nodes_only() {
    let (d, _) = deferred_with_pool();
    let b: BackendRef = d.clone();
    let x = Tensor::on(&b).from_vec(vec![1.0f32; 8], &[8]).unwrap();
    let keep = x.exp().unwrap();
    {
        let _dropped = x.sin().unwrap().cos().unwrap();
    }
    d.prune_unreferenced();
    assert!(d.node_count() <= 2, "{} nodes", d.node_count());
    assert_eq!(keep.to_vec::<f32>().unwrap(), vec![1f32.exp(); 8]);
}

#[test]
fn training_style_loop_keeps_graph_bounded() {
    let (d, _) = deferred_with_pool();
    let b: BackendRef = d.clone();
    let mut w = Tensor::on(&b).from_vec(vec![0.5f32; 16], &[4, 4]).unwrap();
    let x = Tensor::on(&b).from_vec(vec![0.1f32; 16], &[4, 4]).unwrap();
    let mut sizes = Vec::new();
    for _ in 0..50 {
        let g = x.matmul(&w).unwrap().tanh().unwrap().sum(Some(0), true).unwrap();
        w = w.sub(&g.mul_scalar(0.01).unwrap()).unwrap();
        w.to_host().unwrap();
        d.prune_unreferenced();
        sizes.push(d.node_count());
    }
    assert!(sizes.iter().all(|&n| n <= sizes[0] + 2), "{sizes:?}");
}

#[test]
fn counting_wrapper_sees_relu() {
    let counter = Arc::new(CountingBackend::new("count-relu", backend::get("eager").unwrap()));
    let b: BackendRef = counter.clone();
    let x = Tensor::on(&b).from_vec(vec![-1.0f32, 2.0], &[2]).unwrap();
    let before = counter.count("maximum");
    assert_eq!(x.relu().unwrap().to_vec::<f32>().unwrap(), vec![0.0, 2.0]);
    assert_eq!(counter.count("maximum"), before + 1);
}

#[test]
fn mixing_backends_is_an_error() {
    let e = Tensor::on(&backend::get("eager").unwrap())
        .ones(&[2], DType::F32)
        .unwrap();
    let d = Tensor::on(&backend::get("deferred").unwrap())
        .ones(&[2], DType::F32)
        .unwrap();
    assert!(matches!(e.add(&d), Err(Error::BackendMismatch { .. })));
    let moved = d.to_backend(e.backend()).unwrap();
    assert_eq!(e.add(&moved).unwrap().to_vec::<f32>().unwrap(), vec![2.0, 2.0]);
}

#[test]
fn random_programs_agree_across_backends() {
    let eager = backend::get("eager").unwrap();
    let deferred = backend::get("deferred").unwrap();
    let mut failures = 0;
    for seed in 0..200 {
        let p = Program::random(seed, 20);
        if p.run(&eager).failed_at.is_some() {
            failures += 1;
        }
        if let Err(e) = compare(&p.run(&eager), &p.run(&deferred), 1e-6) {
            panic!("seed {seed}: {e}\n{p}");
        }
    }
    assert!(failures > 0 && failures < 200, "{failures} programs failed");
}

#[test]
fn eval_materializes_in_place() {
    let (d, _) = deferred_with_pool();
    let b: BackendRef = d.clone();
    let x = Tensor::on(&b).from_vec(vec![1.0f32, 2.0], &[2]).unwrap();
    let y = x.exp().unwrap();
    let before = d.materialized_count();
    y.eval().unwrap();
    assert!(d.materialized_count() > before);
    let evals = d.stats().evaluations;
    y.to_host().unwrap();
    assert_eq!(d.stats().evaluations, evals);
}
