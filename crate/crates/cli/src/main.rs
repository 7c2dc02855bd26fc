use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use kskdv_cli::{config::ExperimentConfig, run, CliError, Overrides, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Simulate,
    Saddle,
    Nullcontrol,
    Stackelberg,
    Observability,
    CarlemanCheck,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Simulate => Subcommand::Simulate,
            Command::Saddle => Subcommand::Saddle,
            Command::Nullcontrol => Subcommand::Nullcontrol,
            Command::Stackelberg => Subcommand::Stackelberg,
            Command::Observability => Subcommand::Observability,
            Command::CarlemanCheck => Subcommand::CarlemanCheck,
        }
    }
}

/// Experiments for robust Stackelberg control of the stochastic KS-KdV equation.
#[derive(Debug, Parser)]
#[command(name = "kskdv", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Interior grid points.
    #[arg(long)]
    n: Option<usize>,
    /// Tree depth.
    #[arg(long)]
    depth: Option<usize>,
    /// Final penalty.
    #[arg(long)]
    eps: Option<f64>,
}

fn load(args: &Args) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::Io { path: args.config.clone(), source: e })?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    config.apply(&Overrides { seed: args.seed, output: args.out.clone(), n: args.n, depth: args.depth, epsilon: args.eps });
    Ok(config)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let base = args.config.parent().map(PathBuf::from).unwrap_or_default();
    let result = load(&args).and_then(|config| run(args.command.into(), &config, &base).map(|r| (r, config.output)));
    match result {
        Ok((record, out)) => {
            println!("{} finished; outputs in {out}", record.subcommand);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
