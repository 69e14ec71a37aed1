//! End-to-end acceptance checks. Prints one PASS or FAIL line per criterion
//! and exits nonzero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use kindling::autograd::Variable;
use kindling::backend::{self, BackendRef, CountingBackend};
use kindling::data::synth_blobs;
use kindling::distributed::{data_parallel_sync, run_local, Collectives, LocalRendezvous, ReduceOp};
use kindling::memory::trace::bundled_trace;
use kindling::memory::{
    CachingAllocator, MemoryManager, NativeAllocator, Policy, SplitRestrictedAllocator, DEFAULT_SPLIT_THRESHOLD,
};
use kindling::nn::{categorical_cross_entropy, deserialize, models, serialize, Checkpoint, Module, Reduction};
use kindling::op::{MAX_PRIMITIVES, PRIMITIVES};
use kindling::optim::{Optimizer, Sgd};
use kindling::testing::{compare, gradient_cases, Program};
use kindling::{DType, Error, Tensor};
use kindling_cli::memsim::{record_training_trace, simulate};
use kindling_cli::train::{cmd_train, train_in};
use kindling_cli::{BackendChoice, Session, TrainArgs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type Counts = BTreeMap<&'static str, u64>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let cases = gradient_cases().map_err(err)?;
    let mut worst = (0.0, "");
    for case in &cases {
        for seed in 0..10 {
            let r = case.check(seed, 1e-6).map_err(|e| format!("{}: {e}", case.name))?;
            ensure!(
                r.max_relative_error <= 1e-4,
                "{} seed {seed}: relative error {:e}",
                case.name,
                r.max_relative_error
            );
            if r.max_relative_error > worst.0 {
                worst = (r.max_relative_error, case.name);
            }
        }
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(60), "took {t:?}");
    Ok(format!(
        "{} ops and layers x 10 instances, worst {:.2e} ({}), {:.1}s",
        cases.len(),
        worst.0,
        worst.1,
        t.as_secs_f64()
    ))
}

fn backend_equivalence() -> Outcome {
    let eager = backend::get("eager").map_err(err)?;
    let deferred = backend::get("deferred").map_err(err)?;
    let mut failing = 0;
    for seed in 0..200 {
        let p = Program::random(seed, 20);
        let a = p.run(&eager);
        if a.failed_at.is_some() {
            failing += 1;
        }
        compare(&a, &p.run(&deferred), 1e-6).map_err(|e| format!("program {seed}: {e}"))?;
    }
    Ok(format!(
        "200 programs agree within 1e-6; {failing} hit shape errors at the same step on both"
    ))
}

fn count_names(log: &[&'static str]) -> Counts {
    let mut m = BTreeMap::new();
    for n in log {
        *m.entry(*n).or_insert(0) += 1;
    }
    m
}

/// Runs the full CNN forward and backward through a counting wrapper and
/// returns the wrapper counts and every dispatch on this thread.
fn instrumented_cnn() -> Result<(Counts, Counts), String> {
    let counter = Arc::new(CountingBackend::new(
        "acceptance-counting",
        backend::get("eager").map_err(err)?,
    ));
    let b: BackendRef = counter.clone();
    let (r, log) = backend::record_dispatches(|| {
        backend::with_default(b, || -> kindling::Result<()> {
            let model = models::mnist_cnn()?;
            let x = Tensor::rand_uniform(&[2, 1, 28, 28], DType::F32, 0.0, 1.0)?;
            let y = Tensor::from_vec(vec![3i64, 7], &[2])?;
            let out = model.call(&Variable::constant(x))?;
            categorical_cross_entropy(&out, &y, Reduction::Mean)?.backward(None, false)?;
            for p in model.params() {
                p.grad().ok_or(Error::MissingGradient(0))?.to_host()?;
            }
            Ok(())
        })
    });
    r.map_err(err)?;
    Ok((counter.counts(), count_names(&log)))
}

fn source_of_truth_swap() -> Outcome {
    let (wrapped, dispatched) = instrumented_cnn()?;
    for op in ["add", "max", "matmul"] {
        ensure!(dispatched.get(op).copied().unwrap_or(0) > 0, "{op} never dispatched");
    }
    let bypasses: u64 = dispatched
        .iter()
        .map(|(k, &n)| n.saturating_sub(wrapped.get(k).copied().unwrap_or(0)))
        .sum();
    ensure!(
        bypasses == 0 && wrapped == dispatched,
        "{bypasses} bypasses: wrapper {wrapped:?} vs dispatched {dispatched:?}"
    );
    Ok(format!(
        "add {} / max {} / matmul {} all through the wrapper, {} dispatches, 0 bypasses",
        wrapped["add"],
        wrapped["max"],
        wrapped["matmul"],
        wrapped.values().sum::<u64>()
    ))
}

fn operator_discipline() -> Outcome {
    ensure!(PRIMITIVES.len() <= MAX_PRIMITIVES, "{} primitives", PRIMITIVES.len());
    let (_, dispatched) = instrumented_cnn()?;
    let unknown: Vec<_> = dispatched.keys().filter(|k| !PRIMITIVES.contains(k)).collect();
    ensure!(unknown.is_empty(), "unregistered primitives dispatched: {unknown:?}");
    Ok(format!(
        "{} primitives (cap {MAX_PRIMITIVES}); CNN training uses {} of them and nothing else",
        PRIMITIVES.len(),
        dispatched.len()
    ))
}

fn fragmentation() -> Outcome {
    let start = Instant::now();
    let split = Policy::SplitRestricted {
        threshold: DEFAULT_SPLIT_THRESHOLD,
    };
    let policies = [Policy::Caching, split];
    let bundled = simulate(&bundled_trace(), "bundled", &policies).map_err(err)?;
    let trace = record_training_trace(2, 8, 64, 0).map_err(err)?;
    let recorded = simulate(&trace, "recorded", &policies).map_err(err)?;
    let a = bundled.reduction(split).ok_or("no caching baseline on bundled trace")?;
    let b = recorded
        .reduction(split)
        .ok_or("no caching baseline on recorded trace")?;
    let t = start.elapsed();
    ensure!(
        a >= 0.2 && b >= 0.2,
        "reductions {:.1}% and {:.1}%",
        100.0 * a,
        100.0 * b
    );
    ensure!(t < Duration::from_secs(10), "took {t:?}");
    Ok(format!(
        "peak internal fragmentation down {:.1}% (bundled) and {:.1}% (recorded CNN, {} events), {:.1}s",
        100.0 * a,
        100.0 * b,
        trace.len(),
        t.as_secs_f64()
    ))
}

fn rank_values(rank: usize, len: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(rank as u64);
    (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn distributed() -> Outcome {
    const N: usize = 100_000;
    let mut oracle = vec![0.0f64; N];
    for r in 0..8 {
        for (o, v) in oracle.iter_mut().zip(rank_values(r, N)) {
            *o += v as f64;
        }
    }
    let sums = run_local(8, &LocalRendezvous::new("acceptance-allreduce"), |c| {
        c.all_reduce(&Tensor::from_vec(rank_values(c.rank(), N), &[N])?, ReduceOp::Sum)?
            .to_f64_vec()
    })
    .map_err(err)?;
    let mut worst = 0.0f64;
    for s in &sums {
        for (x, o) in s.iter().zip(&oracle) {
            worst = worst.max((x - o).abs() / o.abs().max(1.0));
        }
    }
    ensure!(worst <= 1e-5, "all_reduce relative error {worst:e}");

    const WORLD: usize = 4;
    const BATCH: usize = 32;
    let data = synth_blobs(BATCH * 8, 3, 8, 1).map_err(err)?;
    let (x, y) = (data.fields()[0].clone(), data.fields()[1].clone());
    let init = serialize(&models::mlp(8, 16, 3).map_err(err)?).map_err(err)?;
    let batch = |step: usize, lo: usize, len: usize| -> kindling::Result<(Tensor, Tensor)> {
        let start = (step * BATCH) % x.dims()[0] + lo;
        Ok((x.narrow(0, start, len)?, y.narrow(0, start, len)?))
    };
    let step = |model: &dyn Module, opt: &mut Sgd, bx: Tensor, by: &Tensor| -> kindling::Result<Tensor> {
        opt.zero_grad();
        let loss = categorical_cross_entropy(&model.call(&Variable::constant(bx))?, by, Reduction::Mean)?;
        loss.backward(None, false)?;
        Ok(loss.tensor())
    };

    let single = deserialize(&init).map_err(err)?;
    let mut opt = Sgd::new(single.params(), 0.1);
    let mut want = Vec::new();
    for s in 0..50 {
        let (bx, by) = batch(s, 0, BATCH).map_err(err)?;
        want.push(
            step(single.as_ref(), &mut opt, bx, &by)
                .and_then(|l| l.item())
                .map_err(err)?,
        );
        opt.step().map_err(err)?;
    }
    let shard = BATCH / WORLD;
    let got = run_local(WORLD, &LocalRendezvous::new("acceptance-data-parallel"), |c| {
        let model = deserialize(&init)?;
        let mut opt = Sgd::new(model.params(), 0.1);
        let mut losses = Vec::new();
        for s in 0..50 {
            let (bx, by) = batch(s, c.rank() * shard, shard)?;
            let local = step(model.as_ref(), &mut opt, bx, &by)?;
            losses.push(c.all_reduce(&local, ReduceOp::Sum)?.item()? / WORLD as f64);
            data_parallel_sync(&c, &model.params())?;
            opt.step()?;
        }
        Ok(losses)
    })
    .map_err(err)?;
    let mut worst_loss = 0.0f64;
    for losses in &got {
        for (a, b) in losses.iter().zip(&want) {
            worst_loss = worst_loss.max((a - b).abs());
        }
    }
    ensure!(worst_loss <= 1e-3, "per-step loss differs by {worst_loss:e}");
    Ok(format!(
        "8-rank all_reduce of 1e5 f32 within {worst:.1e}; 4-rank MLP loss within {worst_loss:.1e} of single rank over 50 steps"
    ))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let report = cmd_train(&TrainArgs::synthetic("cnn", 5), &mut std::io::sink()).map_err(err)?;
    let t = start.elapsed();
    let last = report.epochs.last().ok_or("no epochs")?;
    ensure!(last.train_accuracy >= 0.99, "train accuracy {}", last.train_accuracy);
    ensure!(t < Duration::from_secs(60), "took {t:?}");
    let mut detail = format!(
        "synthetic CNN train accuracy {:.3} after 5 epochs in {:.1}s",
        last.train_accuracy,
        t.as_secs_f64()
    );
    match std::env::var_os("MNIST_DIR") {
        Some(dir) => {
            let start = Instant::now();
            let mut args = TrainArgs::synthetic("cnn", 2);
            args.synthetic = false;
            args.data_dir = Some(dir.into());
            let report = cmd_train(&args, &mut std::io::sink()).map_err(err)?;
            let t = start.elapsed();
            let acc = report.epochs.last().ok_or("no epochs")?.test_accuracy;
            ensure!(acc >= 0.97, "MNIST test accuracy {acc}");
            ensure!(t < Duration::from_secs(900), "MNIST took {t:?}");
            detail += &format!("; MNIST test accuracy {acc:.4} in {:.0}s", t.as_secs_f64());
        }
        None => detail += "; real-MNIST check not run (MNIST_DIR unset)",
    }
    Ok(detail)
}

fn params_bits(m: &dyn Module) -> kindling::Result<Vec<Vec<u8>>> {
    m.params().iter().map(|p| Ok(p.tensor().to_host()?.bytes())).collect()
}

fn serialization() -> Outcome {
    let run = || -> kindling::Result<(bool, f64, f64)> {
        let eager = backend::get("eager")?;
        eager.set_seed(42);
        let model = models::mnist_cnn()?;
        let restored = deserialize(&serialize(&model)?)?;
        let exact = params_bits(&model)? == params_bits(restored.as_ref())?;

        let data = synth_blobs(64, 10, 784, 3)?;
        let x = data.fields()[0].reshape(&[64, 1, 28, 28])?;
        let y = data.fields()[1].clone();
        let step = |m: &dyn Module, opt: &mut Sgd, i: usize| -> kindling::Result<f64> {
            opt.zero_grad();
            let out = m.call(&Variable::constant(x.narrow(0, 8 * i, 8)?))?;
            let loss = categorical_cross_entropy(&out, &y.narrow(0, 8 * i, 8)?, Reduction::Mean)?;
            loss.backward(None, false)?;
            opt.step()?;
            loss.tensor().item()
        };
        let mut opt = Sgd::new(model.params(), 0.05).momentum(0.9);
        for i in 0..3 {
            step(&model, &mut opt, i)?;
        }
        let bytes = Checkpoint::of(&model)?.with_optimizer(opt.state()?).to_bytes();
        let straight = step(&model, &mut opt, 3)?;
        let ck = Checkpoint::from_bytes(&bytes)?;
        let resumed = ck.model()?;
        let mut opt2 = Sgd::new(resumed.params(), 0.0);
        opt2.load_state(ck.optimizer.as_ref().ok_or(Error::TapeConsumed)?)?;
        Ok((exact, straight, step(resumed.as_ref(), &mut opt2, 3)?))
    };
    let (exact, straight, resumed) = run().map_err(err)?;
    ensure!(exact, "restored parameters differ");
    ensure!(
        (straight - resumed).abs() <= 1e-6,
        "resumed loss {resumed} vs {straight}"
    );
    Ok(format!(
        "MNIST CNN parameters bit-exact; first resumed loss {resumed:.6} vs {straight:.6}"
    ))
}

fn conservation() -> Outcome {
    let session = Session::new(BackendChoice::Eager, Policy::Caching);
    let mut args = TrainArgs::synthetic("mlp", 1);
    args.train_size = 256;
    train_in(&session, &args, &mut std::io::sink()).map_err(err)?;
    let s = session.memory_stats();
    ensure!(s.alloc_count > 0, "nothing allocated");
    ensure!(
        s.live_bytes_requested == 0 && s.alloc_count == s.free_count,
        "training session: {} live bytes, {} allocs vs {} frees",
        s.live_bytes_requested,
        s.alloc_count,
        s.free_count
    );
    for id in ["eager", "deferred"] {
        let b = backend::get(id).map_err(err)?;
        if let Some(d) = b.as_any().downcast_ref::<backend::DeferredBackend>() {
            d.prune_unreferenced();
        }
        if let Some(pool) = b.memory() {
            let s = pool.stats();
            ensure!(
                s.live_bytes_requested == 0 && s.alloc_count == s.free_count,
                "{id} backend after all checks: {} live bytes, {} allocs vs {} frees",
                s.live_bytes_requested,
                s.alloc_count,
                s.free_count
            );
        }
    }
    let managers: Vec<Box<dyn MemoryManager>> = vec![
        Box::new(NativeAllocator::new()),
        Box::new(CachingAllocator::new()),
        Box::new(SplitRestrictedAllocator::new(DEFAULT_SPLIT_THRESHOLD)),
    ];
    for mut m in managers {
        let block = m.alloc(4096).map_err(err)?;
        m.free(block.block_id).map_err(err)?;
        ensure!(
            matches!(m.free(block.block_id), Err(Error::DoubleFree(_))),
            "{} accepted a double free",
            m.name()
        );
    }
    Ok(format!(
        "{} allocs = {} frees, 0 live bytes; double free rejected by native, caching and split",
        s.alloc_count, s.free_count
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradients),
        ("backend equivalence", backend_equivalence),
        ("source-of-truth swap", source_of_truth_swap),
        ("operator discipline", operator_discipline),
        ("fragmentation reduction", fragmentation),
        ("distributed correctness", distributed),
        ("end-to-end training", end_to_end),
        ("serialization", serialization),
        ("allocator conservation", conservation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
