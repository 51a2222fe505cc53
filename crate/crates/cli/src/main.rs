mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Preference-optimization lab: data generation, gradient checks, training and analysis.
#[derive(Debug, Parser)]
#[command(name = "prefopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic preference dataset (dataset.jsonl).
    GenData(RunArgs),
    /// Check analytic loss gradients against central finite differences.
    Gradcheck(RunArgs),
    /// Train a policy with one of the preference losses.
    Train(RunArgs),
    /// Emit derivative-vs-likelihood curves (curve.csv, curve.svg).
    Curve(RunArgs),
    /// Compare a trained policy with its reference (report.json, report.csv).
    Analyze(RunArgs),
    /// Bin token-level log-likelihood shifts by the deciles of an anchor report.
    BinMap(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config with a top-level "command" field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for per-example gradients.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Seed override (takes precedence over PREFOPT_SEED and the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, config or input files.
    Usage(String),
    /// A numerical check failed or training diverged.
    Numerical(String),
}

impl From<prefopt::Error> for CliError {
    fn from(e: prefopt::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if run_args(&cli.command).threads == 0 {
        eprintln!("error: --threads must be >= 1");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Train(a) => commands::train(a),
        Command::Curve(a) => commands::curve(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::BinMap(a) => commands::bin_map(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run_args(c: &Command) -> &RunArgs {
    match c {
        Command::GenData(a)
        | Command::Gradcheck(a)
        | Command::Train(a)
        | Command::Curve(a)
        | Command::Analyze(a)
        | Command::BinMap(a) => a,
    }
}
