//! Command-line driver for the kindling tensor library: training,
//! backend benchmarks and allocator trace simulation.

pub mod bench;
pub mod config;
pub mod error;
pub mod memsim;
pub mod session;
pub mod train;

pub use config::{BackendChoice, BenchArgs, Cli, Command, MemsimArgs, ModelChoice, OptimChoice, RunConfig, TrainArgs};
pub use error::{CliError, CliResult};
pub use session::Session;

/// Runs one parsed command, writing its JSON report lines to `out`.
pub fn run(command: &Command, out: &mut dyn std::io::Write) -> CliResult<()> {
    match command {
        Command::Train(args) => train::cmd_train(args, out).map(|_| ()),
        Command::Bench(args) => bench::cmd_bench(args, out).map(|_| ()),
        Command::Memsim(args) => memsim::cmd_memsim(args, out).map(|_| ()),
    }
}
