use std::collections::BTreeMap;
use std::io::Write;

use kindling::memory::trace::bundled_trace;
use kindling::memory::{replay, AllocationTrace, AllocatorStats, Policy, TraceRecorder};
use serde::Serialize;

use crate::config::{BackendChoice, MemsimArgs, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::session::Session;
use crate::train::train_in;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyReport {
    pub policy: String,
    pub peak_internal_fragmentation: usize,
    pub stats: AllocatorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemsimSummary {
    pub source: String,
    pub events: usize,
    pub median_alloc: Option<usize>,
    /// `1 - peak(policy) / peak(caching)` per policy; null without a
    /// caching baseline or when the baseline has no fragmentation.
    pub reduction_vs_caching: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemsimReport {
    pub policies: Vec<PolicyReport>,
    pub summary: MemsimSummary,
}

impl MemsimReport {
    pub fn reduction(&self, policy: Policy) -> Option<f64> {
        self.summary
            .reduction_vs_caching
            .get(&policy.to_string())
            .copied()
            .flatten()
    }
}

/// Captures the allocations of a short synthetic CNN training run.
pub fn record_training_trace(epochs: usize, batch: usize, samples: usize, seed: u64) -> CliResult<AllocationTrace> {
    let (recorder, handle) = TraceRecorder::new(Policy::Native.manager());
    let session = Session::with_manager(BackendChoice::Eager, Box::new(recorder));
    let mut args = TrainArgs::synthetic("cnn", epochs);
    args.batch = batch;
    args.train_size = samples;
    args.test_size = batch;
    args.run.seed = seed;
    train_in(&session, &args, &mut std::io::sink())?;
    drop(session);
    Ok(handle.trace())
}

pub fn simulate(trace: &AllocationTrace, source: &str, policies: &[Policy]) -> CliResult<MemsimReport> {
    let mut reports = Vec::new();
    for &p in policies {
        let r = replay(trace, p)?;
        reports.push(PolicyReport {
            policy: p.to_string(),
            peak_internal_fragmentation: r.peak_internal_fragmentation(),
            stats: r.final_stats,
        });
    }
    let baseline = reports
        .iter()
        .find(|r| r.policy == Policy::Caching.to_string())
        .map(|r| r.peak_internal_fragmentation)
        .filter(|&b| b > 0);
    let reduction_vs_caching = reports
        .iter()
        .map(|r| {
            let red = baseline.map(|b| 1.0 - r.peak_internal_fragmentation as f64 / b as f64);
            (r.policy.clone(), red)
        })
        .collect();
    Ok(MemsimReport {
        policies: reports,
        summary: MemsimSummary {
            source: source.into(),
            events: trace.len(),
            median_alloc: trace.median_alloc(),
            reduction_vs_caching,
        },
    })
}

pub fn table(report: &MemsimReport) -> String {
    let mut s = format!("{:<16}{:>16}{:>12}\n", "policy", "peak frag (B)", "vs caching");
    for r in &report.policies {
        let red = match report.summary.reduction_vs_caching.get(&r.policy).copied().flatten() {
            Some(v) => format!("{:.1}%", 100.0 * v),
            None => "-".into(),
        };
        s += &format!("{:<16}{:>16}{:>12}\n", r.policy, r.peak_internal_fragmentation, red);
    }
    s
}

/// Replays the chosen trace under every policy. Writes one JSON line per
/// policy and a summary line; the table goes to stderr.
pub fn cmd_memsim(args: &MemsimArgs, sink: &mut dyn Write) -> CliResult<MemsimReport> {
    let (trace, source) = if let Some(path) = &args.trace {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Trace(format!("{}: {e}", path.display())))?;
        (AllocationTrace::parse(&text)?, path.display().to_string())
    } else if args.record_from_train {
        let t = record_training_trace(args.record_epochs, args.record_batch, args.record_samples, args.seed)?;
        (t, "recorded".to_string())
    } else {
        (bundled_trace(), "bundled".to_string())
    };
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        if args.record_from_train {
            std::fs::write(dir.join("recorded.trace"), trace.to_string())?;
        }
    }
    let report = simulate(&trace, &source, &args.resolved_policies())?;
    for r in &report.policies {
        writeln!(sink, "{}", serde_json::to_string(r)?)?;
    }
    writeln!(sink, "{}", serde_json::to_string(&report.summary)?)?;
    eprint!("{}", table(&report));
    Ok(report)
}
