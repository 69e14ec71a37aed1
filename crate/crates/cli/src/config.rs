use std::path::PathBuf;
use std::str::FromStr;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use kindling::memory::Policy;

use crate::error::{CliError, CliResult, EXIT_CODES_HELP};

#[derive(Debug, Parser)]
#[command(
    name = "kindling",
    version,
    about = "Train models, benchmark backends and replay allocator traces",
    after_help = EXIT_CODES_HELP
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier on MNIST or synthetic blobs.
    Train(TrainArgs),
    /// Time forward, backward and optimizer phases.
    Bench(BenchArgs),
    /// Replay an allocation trace under several allocator policies.
    Memsim(MemsimArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Eager,
    Deferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimChoice {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Mlp,
    Cnn,
}

impl FromStr for ModelChoice {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "mlp" => Ok(ModelChoice::Mlp),
            "cnn" => Ok(ModelChoice::Cnn),
            _ => Err(CliError::Config(format!("unknown model {s:?}, expected mlp or cnn"))),
        }
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} is not a positive number")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} is negative or not finite")),
        Err(e) => Err(e.to_string()),
    }
}

fn policy(s: &str) -> Result<Policy, String> {
    match s.parse::<Policy>() {
        Ok(Policy::SplitRestricted { threshold: 0 }) => Err("split threshold must be positive".into()),
        Ok(p) => Ok(p),
        Err(e) => Err(e.to_string()),
    }
}

/// Settings shared by every subcommand that runs tensors.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    #[arg(long, value_enum, default_value_t = BackendChoice::Eager)]
    pub backend: BackendChoice,
    /// native, caching, split or split:<bytes>.
    #[arg(long, default_value = "native", value_parser = policy)]
    pub alloc: Policy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for metrics, checkpoints and traces.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the deferred graph of the first step in Graphviz format.
    #[arg(long)]
    pub graph_dot: Option<PathBuf>,
    /// Add allocator statistics to every report.
    #[arg(long)]
    pub mem_telemetry: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendChoice::Eager,
            alloc: Policy::Native,
            seed: 0,
            out: None,
            graph_dot: None,
            mem_telemetry: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["data_dir", "synthetic"])))]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunConfig,
    /// mlp or cnn.
    #[arg(long, default_value = "cnn")]
    pub model: String,
    #[arg(long, default_value_t = 2)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64, value_parser = positive_usize)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.05, value_parser = positive_f64)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimChoice::Sgd)]
    pub optim: OptimChoice,
    /// SGD momentum.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative_f64)]
    pub momentum: f64,
    /// Background loader threads; 0 loads on the training thread.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Directory holding the MNIST IDX files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Train on generated Gaussian blobs instead of MNIST.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 1000, value_parser = positive_usize)]
    pub train_size: usize,
    #[arg(long, default_value_t = 200, value_parser = positive_usize)]
    pub test_size: usize,
    /// In-process data-parallel ranks.
    #[arg(long, default_value_t = 1, value_parser = positive_usize)]
    pub ranks: usize,
}

impl TrainArgs {
    /// Synthetic-data defaults for programmatic use.
    pub fn synthetic(model: &str, epochs: usize) -> Self {
        TrainArgs {
            run: RunConfig::default(),
            model: model.into(),
            epochs,
            batch: 64,
            lr: 0.05,
            optim: OptimChoice::Sgd,
            momentum: 0.0,
            workers: 0,
            data_dir: None,
            synthetic: true,
            train_size: 1000,
            test_size: 200,
            ranks: 1,
        }
    }

    pub fn model(&self) -> CliResult<ModelChoice> {
        self.model.parse()
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunConfig,
    /// mlp or cnn.
    #[arg(long, default_value = "mlp")]
    pub model: String,
    #[arg(long, default_value_t = 32, value_parser = positive_usize)]
    pub batch: usize,
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub iters: usize,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0.01, value_parser = positive_f64)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimChoice::Sgd)]
    pub optim: OptimChoice,
    /// Run on both backends and compare.
    #[arg(long)]
    pub compare: bool,
}

impl BenchArgs {
    pub fn new(model: &str, batch: usize, warmup: usize, iters: usize) -> Self {
        BenchArgs {
            run: RunConfig::default(),
            model: model.into(),
            batch,
            iters,
            warmup,
            lr: 0.01,
            optim: OptimChoice::Sgd,
            compare: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MemsimArgs {
    /// Trace file; the bundled trace is used when neither source is given.
    #[arg(long, conflicts_with = "record_from_train")]
    pub trace: Option<PathBuf>,
    /// Record a trace from synthetic CNN training first.
    #[arg(long)]
    pub record_from_train: bool,
    /// Comma-separated policies.
    #[arg(long, value_delimiter = ',', default_value = "native,caching,split", value_parser = policy)]
    pub policies: Vec<Policy>,
    /// Threshold in bytes for every split policy.
    #[arg(long, value_parser = positive_usize)]
    pub threshold: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub record_epochs: usize,
    #[arg(long, default_value_t = 8, value_parser = positive_usize)]
    pub record_batch: usize,
    #[arg(long, default_value_t = 64, value_parser = positive_usize)]
    pub record_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl MemsimArgs {
    pub fn bundled() -> Self {
        MemsimArgs {
            trace: None,
            record_from_train: false,
            policies: vec![Policy::Native, Policy::Caching, "split".parse().expect("known policy")],
            threshold: None,
            record_epochs: 2,
            record_batch: 8,
            record_samples: 64,
            seed: 0,
            out: None,
        }
    }

    /// Policies with `--threshold` applied.
    pub fn resolved_policies(&self) -> Vec<Policy> {
        self.policies
            .iter()
            .map(|&p| match (p, self.threshold) {
                (Policy::SplitRestricted { .. }, Some(threshold)) => Policy::SplitRestricted { threshold },
                _ => p,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("kindling").chain(args.iter().copied()))
    }

    #[test]
    fn train_needs_a_data_source() {
        assert!(parse(&["train"]).is_err());
        assert!(parse(&["train", "--synthetic", "--data-dir", "x"]).is_err());
        let Command::Train(t) = parse(&["train", "--synthetic", "--epochs", "0"]).unwrap().command else {
            panic!("not train")
        };
        assert_eq!(t.epochs, 0);
        assert_eq!(t.model().unwrap(), ModelChoice::Cnn);
    }

    #[test]
    fn numeric_fields_are_validated() {
        assert!(parse(&["train", "--synthetic", "--batch", "0"]).is_err());
        assert!(parse(&["train", "--synthetic", "--lr", "-1"]).is_err());
        assert!(parse(&["train", "--synthetic", "--lr", "nan"]).is_err());
        assert!(parse(&["bench", "--iters", "0"]).is_err());
        assert!(parse(&["train", "--synthetic", "--alloc", "split:0"]).is_err());
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert!(parse(&["train", "--synthetic", "--fast"]).is_err());
        assert!(parse(&["frobnicate"]).is_err());
    }

    #[test]
    fn policies_and_threshold() {
        let Command::Memsim(m) = parse(&["memsim", "--policies", "caching,split:4096", "--threshold", "2048"])
            .unwrap()
            .command
        else {
            panic!("not memsim")
        };
        assert_eq!(
            m.resolved_policies(),
            vec![Policy::Caching, Policy::SplitRestricted { threshold: 2048 }]
        );
        assert!(parse(&["memsim", "--trace", "t", "--record-from-train"]).is_err());
    }

    #[test]
    fn unknown_model_is_a_config_error() {
        let mut t = TrainArgs::synthetic("resnet", 1);
        assert!(matches!(t.model(), Err(CliError::Config(_))));
        t.model = "mlp".into();
        assert_eq!(t.model().unwrap(), ModelChoice::Mlp);
    }
}
