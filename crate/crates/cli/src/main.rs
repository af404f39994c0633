//! `sslv`: run experiments from a TOML config and compare run directories.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sslv::experiment::{compare_runs, run_experiment, write_comparison, ExperimentConfig};
use sslv::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "sslv", version, about = "Semi-supervised surgical video experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Run directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Median, IQR and paired deltas across run directories.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        /// Method or directory name to take deltas against; defaults to the first run.
        #[arg(long)]
        baseline: Option<String>,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn run(config: PathBuf, seed_override: Option<u64>, out: Option<PathBuf>) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    match run_experiment(&cfg, None) {
        Ok(summary) => {
            println!("{} rows -> {}", summary.rows.len(), summary.dir.display());
            if summary.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for (seed, msg) in &summary.failures {
                    eprintln!("seed {seed} failed: {msg}");
                }
                ExitCode::from(EXIT_RUNTIME)
            }
        }
        Err(e @ Error::Config(_)) => fail(EXIT_CONFIG, e),
        Err(e) => fail(EXIT_RUNTIME, e),
    }
}

fn compare(dirs: Vec<PathBuf>, baseline: Option<String>) -> ExitCode {
    let rows = match compare_runs(&dirs, baseline.as_deref()) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    println!("{:<12} {:>6} {:>9} {:>9} {:>12}", "method", "seeds", "median", "iqr", "median_delta");
    for r in &rows {
        let delta = r.median_delta.map_or("-".to_string(), |d| format!("{d:+.4}"));
        println!("{:<12} {:>6} {:>9.4} {:>9.4} {:>12}", r.method, r.n_seeds, r.median, r.iqr, delta);
    }
    match write_comparison(&rows, &PathBuf::from("comparison.csv")) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(EXIT_RUNTIME, e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            seed_override,
            out,
        } => run(config, seed_override, out),
        Command::Compare { dirs, baseline } => compare(dirs, baseline),
    }
}
