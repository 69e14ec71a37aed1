use clap::Parser;
use kindling_cli::error::EXIT_USAGE;
use kindling_cli::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let stdout = std::io::stdout();
    if let Err(e) = kindling_cli::run(&cli.command, &mut stdout.lock()) {
        eprintln!("kindling: {e}");
        std::process::exit(e.exit_code());
    }
}
