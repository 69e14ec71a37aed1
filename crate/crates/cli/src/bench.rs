use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use kindling::autograd::Variable;
use kindling::data::{synth_blobs, BatchDataset, Dataset, DatasetRef};
use kindling::memory::AllocatorStats;
use kindling::nn::{self, categorical_cross_entropy, Reduction};
use serde::Serialize;

use crate::config::{BackendChoice, BenchArgs, ModelChoice};
use crate::error::{CliError, CliResult};
use crate::session::Session;
use crate::train::{build_model, build_optimizer, CLASSES};

/// Distinct batches cycled through by the benchmark.
const BATCHES: usize = 4;

/// Losses of the same iterations on two backends must agree this closely.
pub const LOSS_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PhaseSeconds {
    pub data: f64,
    pub forward: f64,
    pub backward: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub backend: String,
    pub model: String,
    pub batch: usize,
    pub warmup: usize,
    pub iters: usize,
    pub total_seconds: f64,
    pub phases: PhaseSeconds,
    /// Loss of every timed iteration.
    pub losses: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory: Option<AllocatorStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub max_loss_difference: f64,
    /// Eager time over deferred time.
    pub speedup: f64,
}

fn bench_data(model: ModelChoice, batch: usize, seed: u64) -> CliResult<BatchDataset> {
    let side = 28;
    let blobs: DatasetRef = Arc::new(synth_blobs(batch * BATCHES, CLASSES, side * side, seed)?);
    let dims: Vec<usize> = match model {
        ModelChoice::Cnn => vec![1, side, side],
        ModelChoice::Mlp => vec![side * side],
    };
    let shaped = kindling::data::TransformDataset::new(blobs, move |mut s| {
        s[0] = s[0].reshape(&dims)?;
        Ok(s)
    });
    Ok(BatchDataset::new(Arc::new(shaped), batch, true)?)
}

fn bench_on(choice: BackendChoice, args: &BenchArgs, model: ModelChoice, init: &[u8]) -> CliResult<BenchReport> {
    let session = Session::new(choice, args.run.alloc);
    if args.run.graph_dot.is_some() && session.deferred().is_none() && !args.compare {
        return Err(CliError::Config("--graph-dot needs --backend deferred".into()));
    }
    session.run(|| {
        let data = bench_data(model, args.batch, args.run.seed)?;
        let net = nn::deserialize(init)?;
        let mut opt = build_optimizer(args.optim, net.params(), args.lr, 0.0);
        let mut phases = PhaseSeconds::default();
        let mut losses = Vec::with_capacity(args.iters);
        let mut total = 0.0;
        for i in 0..args.warmup + args.iters {
            let timed = i >= args.warmup;
            let t0 = Instant::now();
            let b = data.get(i % data.len())?;
            let x = b[0].to_backend(&session.backend)?;
            let y = b[1].to_backend(&session.backend)?;
            x.eval()?;
            let t1 = Instant::now();
            opt.zero_grad();
            let out = net.call(&Variable::constant(x))?;
            let loss = categorical_cross_entropy(&out, &y, Reduction::Mean)?;
            let value = loss.tensor().item()?;
            let t2 = Instant::now();
            loss.backward(None, false)?;
            for p in opt.params() {
                if let Some(g) = p.grad() {
                    g.eval()?;
                }
            }
            if i == 0 {
                if let (Some(path), Some(d)) = (&args.run.graph_dot, session.deferred()) {
                    std::fs::write(path, d.to_dot())?;
                }
            }
            let t3 = Instant::now();
            opt.step()?;
            for p in opt.params() {
                p.tensor().eval()?;
            }
            let t4 = Instant::now();
            drop((out, loss));
            session.settle();
            if timed {
                phases.data += (t1 - t0).as_secs_f64();
                phases.forward += (t2 - t1).as_secs_f64();
                phases.backward += (t3 - t2).as_secs_f64();
                phases.step += (t4 - t3).as_secs_f64();
                total += (t4 - t0).as_secs_f64();
                losses.push(value);
            }
        }
        Ok(BenchReport {
            backend: format!("{choice:?}").to_lowercase(),
            model: args.model.clone(),
            batch: args.batch,
            warmup: args.warmup,
            iters: args.iters,
            total_seconds: total,
            phases,
            losses,
            memory: args.run.mem_telemetry.then(|| session.memory_stats()),
        })
    })
}

pub fn compare(eager: &BenchReport, deferred: &BenchReport) -> Comparison {
    let max_loss_difference = eager
        .losses
        .iter()
        .zip(&deferred.losses)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    Comparison {
        max_loss_difference,
        speedup: eager.total_seconds / deferred.total_seconds.max(f64::MIN_POSITIVE),
    }
}

/// Plain-text table of per-phase milliseconds per iteration.
pub fn table(reports: &[BenchReport]) -> String {
    let mut s = format!(
        "{:<10}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
        "backend", "data", "forward", "backward", "step", "total"
    );
    for r in reports {
        let ms = |v: f64| 1e3 * v / r.iters as f64;
        s += &format!(
            "{:<10}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}\n",
            r.backend,
            ms(r.phases.data),
            ms(r.phases.forward),
            ms(r.phases.backward),
            ms(r.phases.step),
            ms(r.total_seconds)
        );
    }
    s
}

/// Benchmarks one backend, or both with `--compare`. Writes one JSON line
/// per backend, then a comparison line; the table goes to stderr.
pub fn cmd_bench(args: &BenchArgs, sink: &mut dyn Write) -> CliResult<Vec<BenchReport>> {
    let model = args.model.parse::<ModelChoice>()?;
    let init = Session::new(BackendChoice::Eager, kindling::memory::Policy::Native).run(|| -> CliResult<Vec<u8>> {
        kindling::backend::default_backend().set_seed(args.run.seed);
        Ok(nn::serialize(&build_model(model)?)?)
    })?;
    let choices = if args.compare {
        vec![BackendChoice::Eager, BackendChoice::Deferred]
    } else {
        vec![args.run.backend]
    };
    let mut reports = Vec::new();
    for c in choices {
        let r = bench_on(c, args, model, &init)?;
        writeln!(sink, "{}", serde_json::to_string(&r)?)?;
        reports.push(r);
    }
    if let [e, d] = reports.as_slice() {
        let c = compare(e, d);
        writeln!(sink, "{}", serde_json::to_string(&c)?)?;
        eprint!("{}", table(&reports));
        if c.max_loss_difference > LOSS_TOLERANCE {
            return Err(CliError::Runtime(kindling::Error::Domain(format!(
                "backends disagree: loss difference {:e}",
                c.max_loss_difference
            ))));
        }
    }
    if let Some(dir) = &args.run.out {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("bench.jsonl"))?;
        for r in &reports {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_timed_iteration() {
        let args = BenchArgs::new("mlp", 4, 0, 1);
        let r = cmd_bench(&args, &mut Vec::new()).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].losses.len(), 1);
        assert!(r[0].memory.is_none());
    }

    #[test]
    fn telemetry_is_included_on_request() {
        let mut args = BenchArgs::new("mlp", 4, 1, 2);
        args.run.mem_telemetry = true;
        let mut out = Vec::new();
        cmd_bench(&args, &mut out).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert!(v["memory"]["alloc_count"].as_u64().unwrap() > 0);
    }

    #[test]
    fn backends_agree_on_the_cnn() {
        let mut args = BenchArgs::new("cnn", 2, 1, 3);
        args.compare = true;
        let r = cmd_bench(&args, &mut Vec::new()).unwrap();
        let c = compare(&r[0], &r[1]);
        assert!(c.max_loss_difference <= LOSS_TOLERANCE, "{c:?}");
        assert!(table(&r).lines().count() == 3);
    }

    #[test]
    fn unknown_model_is_rejected() {
        let args = BenchArgs::new("transformer", 4, 0, 1);
        assert!(matches!(cmd_bench(&args, &mut Vec::new()), Err(CliError::Config(_))));
    }
}
