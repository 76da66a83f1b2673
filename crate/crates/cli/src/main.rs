use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use driftlab::par::Execution;
use driftlab_cli::{commands, config, CliError};

#[derive(Parser)]
#[command(name = "driftlab", version, about = "Hidden-drift portfolio laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides mc.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate market scenarios.
    Simulate,
    /// Run the filter and its diagnostics.
    Filter,
    /// Solve the one-asset dynamic programming equation.
    Solve,
    /// Monte Carlo rewards of decision rules.
    Evaluate,
    /// Regularization convergence report.
    Regularize,
}

fn run(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config is required"))?;
    let resolved = config::load(path)?.resolve(cli.seed, cli.out.clone())?;
    for w in resolved.model.warnings() {
        eprintln!("warning: {w}");
    }
    let exec = Execution::from_workers(cli.workers);
    match cli.command {
        Command::Simulate => commands::simulate(&resolved, exec),
        Command::Filter => commands::filter(&resolved, exec),
        Command::Solve => commands::solve(&resolved, exec),
        Command::Evaluate => commands::evaluate(&resolved, exec),
        Command::Regularize => commands::regularize(&resolved, exec),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
