use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use kindling::autograd::{no_grad, Variable};
use kindling::data::{
    self, load_mnist_dir, synth_blobs, BatchDataset, Dataset, DatasetRef, MnistSplit, PrefetchDataset, Sample,
    ShuffleDataset, TransformDataset,
};
use kindling::distributed::{data_parallel_sync, run_local, Collectives, LocalRendezvous, ReduceOp};
use kindling::memory::AllocatorStats;
use kindling::nn::{self, categorical_cross_entropy, models, AccuracyMeter, Checkpoint, Module, Reduction};
use kindling::optim::{Adam, Optimizer, Sgd};
use kindling::{Result, Tensor};
use serde::Serialize;

use crate::config::{ModelChoice, OptimChoice, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::session::Session;

pub const CLASSES: usize = 10;
const SIDE: usize = 28;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory: Option<AllocatorStats>,
}

#[derive(Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Final model and optimizer state.
    pub checkpoint: Checkpoint,
    pub checkpoint_path: Option<PathBuf>,
}

/// Reshapes every sample's input to what `model` expects.
fn shaped(ds: DatasetRef, model: ModelChoice) -> DatasetRef {
    let dims: Vec<usize> = match model {
        ModelChoice::Cnn => vec![1, SIDE, SIDE],
        ModelChoice::Mlp => vec![SIDE * SIDE],
    };
    Arc::new(TransformDataset::new(ds, move |mut s: Sample| {
        s[0] = s[0].reshape(&dims)?;
        Ok(s)
    }))
}

/// Train and test sets for `args`.
pub fn load_data(args: &TrainArgs) -> CliResult<(DatasetRef, DatasetRef)> {
    let model = args.model()?;
    let (train, test): (DatasetRef, DatasetRef) = match (&args.data_dir, args.synthetic) {
        (Some(dir), false) => (
            Arc::new(load_mnist_dir(dir, MnistSplit::Train)?),
            Arc::new(load_mnist_dir(dir, MnistSplit::Test)?),
        ),
        (None, true) => {
            let seed = args.run.seed;
            (
                Arc::new(synth_blobs(args.train_size, CLASSES, SIDE * SIDE, seed)?),
                Arc::new(synth_blobs(args.test_size, CLASSES, SIDE * SIDE, seed.wrapping_add(1))?),
            )
        }
        _ => {
            return Err(CliError::Config(
                "give exactly one of --data-dir and --synthetic".into(),
            ))
        }
    };
    Ok((shaped(train, model), shaped(test, model)))
}

pub fn build_model(model: ModelChoice) -> Result<nn::Sequential> {
    match model {
        ModelChoice::Cnn => models::mnist_cnn(),
        ModelChoice::Mlp => models::mlp(SIDE * SIDE, 128, CLASSES),
    }
}

pub fn build_optimizer(choice: OptimChoice, params: Vec<Variable>, lr: f64, momentum: f64) -> Box<dyn Optimizer> {
    match choice {
        OptimChoice::Sgd => Box::new(Sgd::new(params, lr).momentum(momentum)),
        OptimChoice::Adam => Box::new(Adam::new(params, lr)),
    }
}

/// Every `ranks`-th sample starting at `rank`, truncated so all ranks see
/// the same count.
struct Shard {
    inner: DatasetRef,
    rank: usize,
    ranks: usize,
}

impl Dataset for Shard {
    fn len(&self) -> usize {
        self.inner.len() / self.ranks
    }

    fn get(&self, index: usize) -> Result<Sample> {
        if index >= self.len() {
            return Err(kindling::Error::Index(format!(
                "batch {index} out of range for shard of {}",
                self.len()
            )));
        }
        self.inner.get(index * self.ranks + self.rank)
    }
}

fn batches(ds: DatasetRef, workers: usize) -> Result<Box<dyn Iterator<Item = Result<Sample>>>> {
    if workers == 0 {
        let n = ds.len();
        Ok(Box::new((0..n).map(move |i| ds.get(i))))
    } else {
        Ok(Box::new(PrefetchDataset::new(ds, workers, 2 * workers)?.iter()))
    }
}

/// Fraction of `data` that `model` classifies correctly.
pub fn evaluate(model: &dyn Module, data: &DatasetRef, batch: usize) -> Result<f64> {
    let batched = BatchDataset::new(data.clone(), batch, false)?;
    let mut meter = AccuracyMeter::new();
    for b in data::iter(&batched) {
        let b = b?;
        let out = no_grad(|| model.call(&Variable::constant(b[0].clone())))?;
        meter.add(&out.tensor(), &b[1])?;
    }
    meter.value()
}

struct EpochTotals {
    loss_sum: f64,
    correct: f64,
    seen: f64,
}

struct Trainer<'a> {
    session: &'a Session,
    args: &'a TrainArgs,
    comm: Option<&'a dyn Collectives>,
    dot_written: bool,
}

impl Trainer<'_> {
    fn epoch(
        &mut self,
        model: &dyn Module,
        opt: &mut dyn Optimizer,
        train: &DatasetRef,
        epoch: usize,
    ) -> CliResult<EpochTotals> {
        let seed = self.args.run.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64);
        let shuffled: DatasetRef = Arc::new(ShuffleDataset::new(train.clone(), seed));
        let mut batched: DatasetRef = Arc::new(BatchDataset::new(shuffled, self.args.batch, false)?);
        if let Some(c) = self.comm {
            batched = Arc::new(Shard {
                inner: batched,
                rank: c.rank(),
                ranks: c.world_size(),
            });
        }
        let backend = self.session.backend.clone();
        let mut totals = EpochTotals {
            loss_sum: 0.0,
            correct: 0.0,
            seen: 0.0,
        };
        for b in batches(batched, self.args.workers)? {
            let b = b?;
            let x = b[0].to_backend(&backend)?;
            let y = b[1].to_backend(&backend)?;
            let n = y.numel() as f64;
            opt.zero_grad();
            let out = model.call(&Variable::constant(x))?;
            let loss = categorical_cross_entropy(&out, &y, Reduction::Mean)?;
            loss.backward(None, false)?;
            self.write_dot()?;
            if let Some(c) = self.comm {
                data_parallel_sync(c, opt.params())?;
            }
            opt.step()?;
            for p in opt.params() {
                p.tensor().eval()?;
            }
            let mut meter = AccuracyMeter::new();
            meter.add(&out.tensor(), &y)?;
            totals.correct += meter.counts().0 as f64;
            totals.loss_sum += loss.tensor().item()? * n;
            totals.seen += n;
            drop((out, loss));
            self.session.settle();
        }
        if let Some(c) = self.comm {
            let t = Tensor::from_vec(vec![totals.loss_sum, totals.correct, totals.seen], &[3])?;
            let v = c.all_reduce(&t, ReduceOp::Sum)?.to_vec::<f64>()?;
            totals = EpochTotals {
                loss_sum: v[0],
                correct: v[1],
                seen: v[2],
            };
        }
        Ok(totals)
    }

    fn write_dot(&mut self) -> CliResult<()> {
        if self.dot_written {
            return Ok(());
        }
        self.dot_written = true;
        if let (Some(path), Some(d)) = (&self.args.run.graph_dot, self.session.deferred()) {
            if self.comm.is_none_or(|c| c.rank() == 0) {
                std::fs::write(path, d.to_dot())?;
            }
        }
        Ok(())
    }
}

/// Trains with a fresh session built from `args`.
pub fn cmd_train(args: &TrainArgs, sink: &mut dyn Write) -> CliResult<TrainReport> {
    let session = Session::new(args.run.backend, args.run.alloc);
    train_in(&session, args, sink)
}

/// Trains on `session`, writing one JSON metrics line per epoch to `sink`
/// and, with `--out`, to `metrics.jsonl` plus a `model.flck` checkpoint.
pub fn train_in(session: &Session, args: &TrainArgs, sink: &mut dyn Write) -> CliResult<TrainReport> {
    let model_choice = args.model()?;
    if args.run.graph_dot.is_some() && session.deferred().is_none() {
        return Err(CliError::Config("--graph-dot needs --backend deferred".into()));
    }
    if let Some(dir) = &args.run.out {
        std::fs::create_dir_all(dir)?;
    }
    let mut metrics_file = match &args.run.out {
        Some(dir) => Some(std::fs::File::create(dir.join("metrics.jsonl"))?),
        None => None,
    };
    session.run(|| {
        session.backend.set_seed(args.run.seed);
        let (train, test) = load_data(args)?;
        let init = nn::serialize(&build_model(model_choice)?)?;
        let run_rank = |comm: Option<&dyn Collectives>, sink: &mut dyn Write| -> CliResult<TrainReport> {
            let model = nn::deserialize(&init)?;
            let mut opt = build_optimizer(args.optim, model.params(), args.lr, args.momentum);
            let lead = comm.is_none_or(|c| c.rank() == 0);
            let mut trainer = Trainer {
                session,
                args,
                comm,
                dot_written: false,
            };
            let mut epochs = Vec::new();
            for epoch in 1..=args.epochs {
                let start = Instant::now();
                let t = trainer.epoch(model.as_ref(), opt.as_mut(), &train, epoch)?;
                let test_accuracy = evaluate(model.as_ref(), &test, args.batch.max(64))?;
                let m = EpochMetrics {
                    epoch,
                    train_loss: t.loss_sum / t.seen.max(1.0),
                    train_accuracy: t.correct / t.seen.max(1.0),
                    test_accuracy,
                    wall_seconds: start.elapsed().as_secs_f64(),
                    memory: args.run.mem_telemetry.then(|| session.memory_stats()),
                };
                if lead {
                    writeln!(sink, "{}", serde_json::to_string(&m)?)?;
                }
                epochs.push(m);
            }
            let checkpoint = Checkpoint::of(model.as_ref())?.with_optimizer(opt.state()?);
            Ok(TrainReport {
                epochs,
                checkpoint,
                checkpoint_path: None,
            })
        };
        let mut report = if args.ranks == 1 {
            run_rank(None, sink)?
        } else {
            let group = LocalRendezvous::new(format!("{}-train", session.backend.id()));
            let mut reports = run_local(args.ranks, &group, |c| {
                run_rank(Some(&c), &mut std::io::sink()).map_err(|e| match e {
                    CliError::Runtime(e) => e,
                    other => kindling::Error::Config(other.to_string()),
                })
            })?;
            let lead = reports.swap_remove(0);
            for m in &lead.epochs {
                writeln!(sink, "{}", serde_json::to_string(m)?)?;
            }
            lead
        };
        for m in &report.epochs {
            if let Some(f) = &mut metrics_file {
                writeln!(f, "{}", serde_json::to_string(m)?)?;
            }
        }
        if let Some(dir) = &args.run.out {
            let path = dir.join("model.flck");
            report.checkpoint.save(&path)?;
            report.checkpoint_path = Some(path);
        }
        Ok(report)
    })
}
