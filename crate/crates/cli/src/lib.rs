//! `qsg`: config-driven experiments over the quantized naming dynamics.
//!
//! Every command reads a TOML experiment file, writes tidy CSV tables into
//! the output directory and finishes with `manifest.json`, which echoes the
//! effective config and lists a SHA-256 digest per data file. Data files
//! carry no timestamps, so re-running a config reproduces them byte for byte.
//!
//! Exit codes: 0 on success, 1 for config errors, 2 for runtime errors.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{load_experiment, load_nnd, ExperimentConfig, NndExperiment, SCHEMA_VERSION};
pub use error::CliError;
pub use output::{fmt_f64, RunManifest, Table, MANIFEST_FILE};

use output::{build_id, config_digest, Estimates, OutputDir, CSV_SCHEMA_VERSION, MANIFEST_SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(name = "qsg", version, about = "Quantized-channel naming dynamics: runs, sweeps and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trajectories of one configuration.
    Run(CommonArgs),
    /// Trajectories across one axis (N, m, T, h or alpha) with theory columns.
    Sweep(CommonArgs),
    /// Measured versus predicted excess drift on dynamic snapshots.
    DriftCheck(CommonArgs),
    /// Fixation probabilities over an (N, h) grid, K = 2.
    Fixation(CommonArgs),
    /// Mean-field overlay curve and scalar predictions.
    Theory(CommonArgs),
    /// Naming-drift runs with synthetic agents.
    Nnd(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment file (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the trial count.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "QSG_WORKERS")]
    pub workers: Option<usize>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Run(_) => "run",
            Command::Sweep(_) => "sweep",
            Command::DriftCheck(_) => "drift-check",
            Command::Fixation(_) => "fixation",
            Command::Theory(_) => "theory",
            Command::Nnd(_) => "nnd",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Run(a)
            | Command::Sweep(a)
            | Command::DriftCheck(a)
            | Command::Fixation(a)
            | Command::Theory(a)
            | Command::Nnd(a) => a,
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn configure_workers(workers: Option<usize>) -> Result<(), CliError> {
    let Some(n) = workers else {
        return Ok(());
    };
    if n < 1 {
        return Err(CliError::field("workers", "must be >= 1"));
    }
    // A pool already built by an earlier call in this process is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn finish<C: Serialize>(
    command: &str,
    out: &Path,
    config: &C,
    seed: u64,
    started_at: String,
    tables: Vec<Table>,
    estimates: Option<Estimates>,
) -> Result<RunManifest, CliError> {
    let (config, config_sha256) = config_digest(config)?;
    let mut dir = OutputDir::create(out)?;
    for t in &tables {
        dir.write(t)?;
    }
    if let Some(e) = estimates {
        dir.write(&e.into_table())?;
    }
    dir.finish(RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        csv_schema_version: CSV_SCHEMA_VERSION,
        command: command.to_string(),
        config,
        config_sha256,
        seed,
        build: build_id(),
        started_at,
        finished_at: now(),
        outputs: Vec::new(),
    })
}

/// Runs one parsed command and writes its outputs.
pub fn execute(command: &Command) -> Result<RunManifest, CliError> {
    let args = command.args();
    configure_workers(args.workers)?;
    let started_at = now();
    let name = command.name();
    if let Command::Nnd(_) = command {
        let mut cfg = load_nnd(&args.config)?;
        if let Some(s) = args.seed {
            cfg.nnd.seed = s;
        }
        if let Some(t) = args.trials {
            cfg.trials = t;
        }
        let mut est = Estimates::new(&config_digest(&cfg)?.1);
        let tables = commands::cmd_nnd(&cfg, &mut est)?;
        return finish(name, &args.out, &cfg, cfg.nnd.seed, started_at, tables, Some(est));
    }

    let mut cfg = load_experiment(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    let mut est = Estimates::new(&config_digest(&cfg)?.1);
    let (tables, est) = match command {
        Command::Run(_) => (commands::cmd_run(&cfg, &mut est)?, Some(est)),
        Command::Sweep(_) => (commands::cmd_sweep(&cfg, &mut est)?, Some(est)),
        Command::DriftCheck(_) => (commands::cmd_drift_check(&cfg, &mut est)?, Some(est)),
        Command::Fixation(_) => (commands::cmd_fixation(&cfg, &mut est)?, Some(est)),
        Command::Theory(_) => (commands::cmd_theory(&cfg)?, None),
        Command::Nnd(_) => unreachable!("handled above"),
    };
    finish(name, &args.out, &cfg, cfg.seed, started_at, tables, est)
}

/// Parses `args` (program name first), runs the command and maps the
/// outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli.command) {
        Ok(m) => {
            for f in &m.outputs {
                println!("{}  {}", f.sha256, f.file);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qsg {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
