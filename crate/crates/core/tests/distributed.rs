use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use kindling::autograd::Variable;
use kindling::data::synth_blobs;
use kindling::distributed::{data_parallel_sync, run_local, Collectives, LocalRendezvous, ReduceOp};
use kindling::nn::{categorical_cross_entropy, deserialize, models, serialize, Module, Reduction};
use kindling::optim::{Optimizer, Sgd};
use kindling::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static NEXT: AtomicU64 = AtomicU64::new(0);

fn group() -> LocalRendezvous {
    LocalRendezvous::new(format!("it-{}", NEXT.fetch_add(1, Ordering::Relaxed))).timeout(Duration::from_secs(60))
}

fn rank_data(rank: usize, len: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + rank as u64);
    (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn check_all_reduce(world: usize, len: usize) {
    let mut sum = vec![0.0f64; len];
    let mut max = vec![f64::NEG_INFINITY; len];
    for r in 0..world {
        for (i, v) in rank_data(r, len).into_iter().enumerate() {
            sum[i] += v as f64;
            max[i] = max[i].max(v as f64);
        }
    }
    let out = run_local(world, &group(), |c| {
        let t = Tensor::from_vec(rank_data(c.rank(), len), &[len])?;
        Ok((
            c.all_reduce(&t, ReduceOp::Sum)?.to_f64_vec()?,
            c.all_reduce(&t, ReduceOp::Max)?.to_f64_vec()?,
        ))
    })
    .unwrap();
    for (s, m) in out {
        for i in 0..len {
            assert!(
                (s[i] - sum[i]).abs() <= 1e-5 * sum[i].abs().max(1.0),
                "sum[{i}] {} vs {}",
                s[i],
                sum[i]
            );
            assert_eq!(m[i], max[i]);
        }
    }
}

#[test]
fn all_reduce_matches_sequential_sum_small() {
    check_all_reduce(8, 1000);
}

#[test]
fn all_reduce_matches_sequential_sum_large() {
    check_all_reduce(8, 100_000);
}

#[test]
fn all_gather_stacks_in_rank_order() {
    let out = run_local(5, &group(), |c| {
        let t = Tensor::from_vec(rank_data(c.rank(), 7), &[7])?;
        c.all_gather(&t)?.to_vec::<f32>()
    })
    .unwrap();
    let want: Vec<f32> = (0..5).flat_map(|r| rank_data(r, 7)).collect();
    assert!(out.iter().all(|g| *g == want));
}

#[test]
fn broadcast_and_barrier() {
    let out = run_local(4, &group(), |c| {
        c.barrier()?;
        let t = Tensor::from_vec(vec![c.rank() as f32; 3], &[3])?;
        c.broadcast(&t, 2)?.to_vec::<f32>()
    })
    .unwrap();
    assert!(out.iter().all(|v| *v == vec![2.0; 3]));
}

const WORLD: usize = 4;
const BATCH: usize = 16;
const STEPS: usize = 50;

fn step_batch(x: &Tensor, y: &Tensor, step: usize, lo: usize, len: usize) -> (Tensor, Tensor) {
    let start = (step * BATCH) % x.dims()[0] + lo;
    (x.narrow(0, start, len).unwrap(), y.narrow(0, start, len).unwrap())
}

fn sgd_step(model: &dyn Module, opt: &mut Sgd, x: &Tensor, y: &Tensor) -> kindling::Result<()> {
    opt.zero_grad();
    let out = model.call(&Variable::constant(x.clone()))?;
    categorical_cross_entropy(&out, y, Reduction::Mean)?.backward(None, false)
}

#[test]
fn data_parallel_matches_single_process_training() {
    let data = synth_blobs(256, 3, 6, 4).unwrap();
    let (x, y) = (data.fields()[0].clone(), data.fields()[1].clone());
    let init = serialize(&models::mlp(6, 12, 3).unwrap()).unwrap();

    let single = deserialize(&init).unwrap();
    let mut opt = Sgd::new(single.params(), 0.1).momentum(0.9);
    for s in 0..STEPS {
        let (bx, by) = step_batch(&x, &y, s, 0, BATCH);
        sgd_step(single.as_ref(), &mut opt, &bx, &by).unwrap();
        opt.step().unwrap();
    }
    let want: Vec<Vec<f64>> = single
        .params()
        .iter()
        .map(|p| p.tensor().to_f64_vec().unwrap())
        .collect();

    let shard = BATCH / WORLD;
    let ranks = run_local(WORLD, &group(), |c| {
        let model = deserialize(&init)?;
        let mut opt = Sgd::new(model.params(), 0.1).momentum(0.9);
        for s in 0..STEPS {
            let (bx, by) = step_batch(&x, &y, s, c.rank() * shard, shard);
            sgd_step(model.as_ref(), &mut opt, &bx, &by)?;
            data_parallel_sync(&c, &model.params())?;
            opt.step()?;
        }
        model
            .params()
            .iter()
            .map(|p| p.tensor().to_f64_vec())
            .collect::<kindling::Result<Vec<_>>>()
    })
    .unwrap();

    for got in &ranks {
        for (a, b) in got.iter().zip(&want) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() <= 1e-3, "{u} vs {v}");
            }
        }
    }
    assert_eq!(ranks[0], ranks[WORLD - 1]);
}
