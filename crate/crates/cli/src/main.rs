//! `selfsim` — deterministic experiment runner for the blow-up laboratory.
//!
//! Subcommands:
//! - `run    --config exp.toml [--out dir] [--threads n] [--stride Δs]`
//! - `sweep  --config exp.toml [--out dir] ...` (exit-map lattice)
//! - `diff   <run-a> <run-b>` (field-wise manifest comparison)
//! - `report --out dir` (summarize an existing run)
//!
//! Exit codes: 0 when all attached checks pass, 1 when the run completes but
//! a check fails, 2 for configuration or execution errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use selfsim_cli::config::RunConfig;
use selfsim_cli::experiments::{execute_run, execute_sweep};
use selfsim_cli::manifest::{claim_dir, diff_runs, RunManifest, MANIFEST_NAME};

#[derive(Parser)]
#[command(name = "selfsim", version, about = "blow-up laboratory experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment described by a config file.
    Run(RunArgs),
    /// Exit-map lattice over the shooting search box.
    Sweep(RunArgs),
    /// Field-wise comparison of two run manifests.
    Diff {
        /// First run: a manifest path or its directory.
        run_a: PathBuf,
        /// Second run: a manifest path or its directory.
        run_b: PathBuf,
    },
    /// Summarize an existing run directory.
    Report {
        /// Run directory holding a manifest.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel sections.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the storage stride Δs (becomes part of the run's identity).
    #[arg(long)]
    stride: Option<f64>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether all attached checks passed.
fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => execute(args, false),
        Command::Sweep(args) => execute(args, true),
        Command::Diff { run_a, run_b } => {
            let a = RunManifest::load(&manifest_path(&run_a))?;
            let b = RunManifest::load(&manifest_path(&run_b))?;
            let text = diff_runs(&a, &b)?;
            print!("{text}");
            Ok(true)
        }
        Command::Report { out } => {
            let manifest = RunManifest::load(&out.join(MANIFEST_NAME))?;
            print!("{}", manifest.summary());
            Ok(manifest.passed())
        }
    }
}

fn execute(args: RunArgs, is_sweep: bool) -> Result<bool> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(stride) = args.stride {
        config.solver.store_stride = stride;
    }
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(anyhow!("--threads: needs at least one worker"));
        }
        // a second initialization in the same process is harmless: the pool
        // is already sized, so the request is simply ignored
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let validated = config.validate()?;
    let dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .ok_or_else(|| anyhow!("out_dir: set it in the config or pass --out"))?;
    claim_dir(&dir, &config.sha256())?;

    let manifest = if is_sweep {
        execute_sweep(&config, &validated, &dir)
    } else {
        execute_run(&config, &validated, &dir)
    }
    .with_context(|| format!("{} failed", config.tag))?;

    print!("{}", manifest.summary());
    Ok(manifest.passed())
}

/// Accept either the manifest file itself or the directory holding it.
fn manifest_path(arg: &Path) -> PathBuf {
    if arg.is_dir() {
        arg.join(MANIFEST_NAME)
    } else {
        arg.to_path_buf()
    }
}
