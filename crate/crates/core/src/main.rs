use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ocplab::cli::{run, thread_request, Command, RunArgs, EXIT_USAGE};

/// Optimal control in coefficients: solvers, optimizer and domain-perturbation
/// studies driven by a JSON problem config.
#[derive(Debug, Parser)]
#[command(name = "lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Problem config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to LAB_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match thread_request(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    if let Err(e) = ocplab::par::init_threads(threads) {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(EXIT_USAGE as u8);
    }
    let args = RunArgs {
        command: cli.command,
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
    };
    match run(&args) {
        Ok(m) => {
            println!("{}: wrote {} files to {}", m.command, m.files.len() + 1, args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
