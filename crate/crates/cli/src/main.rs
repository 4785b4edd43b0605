use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use bsde_ident::experiment::{parse_config, run_experiment, Check, ExperimentError};
use clap::Parser;

/// Simulate, solve and check a BSDE experiment described by a TOML config.
///
/// Exit status: 0 when every enabled check passes, 1 when a check fails,
/// 2 on a fault (bad config, simulation or solver error, I/O).
#[derive(Debug, Parser)]
#[command(name = "bsde-ident", version)]
struct Args {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.paths`.
    #[arg(long)]
    paths: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checks to run, overriding `run.checks`.
    #[arg(long, value_delimiter = ',')]
    check: Option<Vec<Check>>,
}

fn run(args: Args) -> anyhow::Result<bool> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("in {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(paths) = args.paths {
        if paths < 2 {
            bail!("--paths must be at least 2, got {paths}");
        }
        cfg.run.paths = paths;
    }
    if let Some(out) = args.out {
        cfg.output.dir = out;
    }
    if let Some(mut checks) = args.check {
        checks.sort();
        checks.dedup();
        cfg.run.checks = Some(checks);
    }
    let outcome = run_experiment(&cfg).map_err(|e: ExperimentError| {
        anyhow::Error::new(e).context(format!("experiment `{}` aborted", cfg.name))
    })?;
    print!("{}", outcome.summary);
    println!("artifacts: {}", outcome.out_dir.display());
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let category = e
                .downcast_ref::<ExperimentError>()
                .map_or("config", ExperimentError::category);
            eprintln!("fault: {category}: {e:#}");
            ExitCode::from(2)
        }
    }
}
