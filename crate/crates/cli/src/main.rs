//! `rieszlab`: equilibrium measures, Gibbs sampling and fluctuation checks for Riesz gases.

mod config;
mod run;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use run::Stage;

/// Exit status for command-line usage errors.
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "rieszlab", version, about = "Numerical laboratory for super-Coulombic Riesz gases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; the shipped defaults are used without it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output root, overriding the configuration; each run writes to `<out>/<subcommand>`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,
    /// Single thread and no wall-clock fields in the manifest.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the equilibrium measure and effective potential.
    Equilibrium,
    /// Sample the Gibbs measure with Metropolis chains.
    Sample,
    /// Local-law statistics of a sampled ensemble.
    Locallaw,
    /// Linear-statistic fluctuations of a sampled ensemble against the CLT.
    Clt,
    /// Transport map of a bump test function (d = 1).
    Transport,
    /// Run the built-in exact checks.
    Selftest,
    /// Print the shipped configuration.
    DefaultConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let threads = if cli.deterministic { 1 } else { cli.threads.unwrap_or(0) };
    if threads == 0 && cli.threads.is_some() {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_USAGE);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: cannot start the thread pool: {e}");
        return ExitCode::FAILURE;
    }

    let stage = match cli.command {
        Command::Selftest => {
            return if selftest::run() == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
        Command::DefaultConfig => {
            print!("{}", config::DEFAULT_CONFIG);
            return ExitCode::SUCCESS;
        }
        Command::Equilibrium => Stage::Equilibrium,
        Command::Sample => Stage::Sample,
        Command::Locallaw => Stage::Locallaw,
        Command::Clt => Stage::Clt,
        Command::Transport => Stage::Transport,
    };

    let mut config = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }

    match run::run(stage, &config, rayon::current_num_threads(), cli.deterministic) {
        Ok(dir) => {
            println!("{}: wrote {}", stage.name(), dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
