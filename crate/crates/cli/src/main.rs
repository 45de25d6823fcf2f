use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use coperc_cli::{load_spec, run_experiment, Mode, DEFAULT_OUT, OUT_ENV};

/// Runs collaborative-perception experiments from a TOML config.
#[derive(Debug, Parser)]
#[command(name = "runner", version)]
struct Args {
    config: PathBuf,
    /// Base seed; trial k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory. Falls back to the config, then to $COPERC_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let mut spec = match load_spec(&args.config) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = args.seed {
        spec.scenario.seed = seed;
    }
    if let Some(mode) = args.mode {
        spec.experiment.mode = mode;
    }
    if let Some(trials) = args.trials {
        spec.experiment.trials = trials;
    }
    if let Err(e) = spec.validate() {
        eprintln!("config error: {}: {e}", args.config.display());
        return ExitCode::from(1);
    }
    let out = args
        .out
        .or_else(|| spec.experiment.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    match run_experiment(&spec, &out) {
        Ok(summary) if summary.failures.is_empty() => {
            log::info!("{} rows written to {}", summary.rows.len(), summary.metrics_path.display());
            ExitCode::SUCCESS
        }
        Ok(summary) => {
            log::error!("{} of {} trials failed", summary.failures.len(), spec.experiment.trials);
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::from(2)
        }
    }
}
