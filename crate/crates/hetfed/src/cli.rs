//! The `hetfed` command-line interface.
//!
//! Exit codes are a stable contract: 0 success, 1 usage error, 2 validation
//! error (bad config or failed verification), 3 numeric abort (a loss went
//! non-finite and the run stopped with a diagnostic).

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use hetfed_core::federation::{
    run_experiment_with, ClientRunner, ExperimentOutput, FederationConfig, SerialRunner,
};
use hetfed_core::metrics::Phase;
use hetfed_core::SimError;

use crate::config::{load_config, ConfigError};
use crate::formats::csv::write_metrics_csv;
use crate::formats::manifest::{config_hash, write_manifest, RunManifest};
use crate::formats::matrix::dump_correlation_matrix;
use crate::runner::ThreadRunner;
use crate::verify::run_battery;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable that re-roots relative `--out` paths.
pub const OUT_ROOT_ENV: &str = "HETFED_OUT_ROOT";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<SimError> for CliError {
    fn from(err: SimError) -> Self {
        match err {
            SimError::NonFinite(msg) => CliError::Numeric(format!("numeric abort: {msg}")),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(err: ConfigError) -> Self {
        match err {
            ConfigError::Unreadable(msg) => CliError::Usage(msg),
            ConfigError::Invalid(msg) => CliError::Validation(msg),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "hetfed",
    version,
    about = "Deterministic desk-scale simulator of heterogeneous federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a config file.
    Run {
        /// Path to the TOML config.
        config: PathBuf,
        /// Output directory (default `hetfed-out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one experiment per value of a hyper-parameter axis and write an
    /// aggregated summary.
    Sweep {
        config: PathBuf,
        /// Axis name: omega | tau | lambda | mu | shift_strength.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in invariant battery and print a pass/fail table.
    Verify,
}

fn resolve_out(out: Option<PathBuf>, default: &str) -> PathBuf {
    let path = out.unwrap_or_else(|| PathBuf::from(default));
    if path.is_relative() {
        if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
            return PathBuf::from(root).join(path);
        }
    }
    path
}

fn apply_axis(cfg: &mut FederationConfig, axis: &str, value: f64) -> Result<(), CliError> {
    match axis {
        "omega" => cfg.losses.omega = value,
        "tau" => cfg.losses.tau = value,
        "lambda" => cfg.losses.lambda = value,
        "mu" => cfg.losses.mu = value,
        "shift_strength" => cfg.scenario.shift_strength = value,
        other => {
            return Err(CliError::Usage(format!(
                "unknown sweep axis '{other}' (expected omega, tau, lambda, mu, or shift_strength)"
            )));
        }
    }
    cfg.validate().map_err(CliError::from)
}

/// Execute one configured experiment and write its artifacts into `out_dir`.
/// Returns the finished output for summarization.
fn run_into(
    cfg: &FederationConfig,
    config_bytes: &[u8],
    out_dir: &Path,
) -> Result<ExperimentOutput, CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", out_dir.display())))?;
    let runner: &dyn ClientRunner = if cfg.parallel_clients { &ThreadRunner } else { &SerialRunner };
    let started = Instant::now();
    let manifest_path = out_dir.join("run.manifest");

    let output = match run_experiment_with(cfg, runner) {
        Ok(output) => output,
        Err(err) => {
            let aborted = RunManifest {
                config_sha256: config_hash(config_bytes),
                seed: cfg.seed,
                artifact_version: env!("CARGO_PKG_VERSION").to_string(),
                outputs: Vec::new(),
                status: format!("aborted: {err}"),
                wall_clock_ms: started.elapsed().as_millis(),
            };
            let _ = write_manifest(&aborted, &manifest_path);
            return Err(err.into());
        }
    };

    let mut outputs = vec![String::from("metrics.csv")];
    write_metrics_csv(&output.log, &out_dir.join("metrics.csv"))
        .map_err(|e| CliError::Validation(format!("cannot write metrics.csv: {e}")))?;
    for dump in &output.log.correlations {
        let name = format!("corr_e{:03}_c{}.txt", dump.epoch, dump.client);
        dump_correlation_matrix(&dump.values, &out_dir.join(&name))
            .map_err(|e| CliError::Validation(format!("cannot write {name}: {e}")))?;
        outputs.push(name);
    }

    let manifest = RunManifest {
        config_sha256: config_hash(config_bytes),
        seed: cfg.seed,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
        status: String::from("completed"),
        wall_clock_ms: started.elapsed().as_millis(),
    };
    write_manifest(&manifest, &manifest_path)
        .map_err(|e| CliError::Validation(format!("cannot write manifest: {e}")))?;
    Ok(output)
}

pub fn cmd_run(
    config_path: &Path,
    out: Option<PathBuf>,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let config_bytes = std::fs::read(config_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", config_path.display())))?;
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    let out_dir = resolve_out(out, "hetfed-out");
    let output = run_into(&cfg, &config_bytes, &out_dir)?;
    if let Some((intra, inter)) = output.log.trailing_mean(Phase::PostLocal, 3) {
        println!(
            "{}: intra {:.4} inter {:.4} (mean of last 3 epochs) -> {}",
            cfg.strategy.name(),
            intra,
            inter,
            out_dir.display()
        );
    } else {
        println!("{}: finished -> {}", cfg.strategy.name(), out_dir.display());
    }
    Ok(())
}

pub fn cmd_sweep(
    config_path: &Path,
    axis: &str,
    values: &[f64],
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::Usage(String::from("sweep needs at least one value")));
    }
    let config_bytes = std::fs::read(config_path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", config_path.display())))?;
    let base = load_config(config_path)?;
    let out_dir = resolve_out(out, "hetfed-sweep");

    let mut summary = String::from("axis,value,intra_last3,inter_last3\n");
    for &value in values {
        let mut cfg = base.clone();
        apply_axis(&mut cfg, axis, value)?;
        let run_dir = out_dir.join(format!("{axis}_{value}"));
        let output = run_into(&cfg, &config_bytes, &run_dir)?;
        let (intra, inter) = output
            .log
            .trailing_mean(Phase::PostLocal, 3)
            .unwrap_or((0.0, 0.0));
        summary.push_str(&format!("{axis},{value},{intra:.4},{inter:.4}\n"));
        println!("{axis} = {value}: intra {intra:.4} inter {inter:.4}");
    }
    crate::formats::write_atomic(&out_dir.join("sweep_summary.csv"), &summary)
        .map_err(|e| CliError::Validation(format!("cannot write sweep summary: {e}")))?;
    Ok(())
}

pub fn cmd_verify() -> Result<(), CliError> {
    let results = run_battery();
    let mut failures = 0;
    for check in &results {
        if check.passed {
            println!("PASS  {}", check.name);
        } else {
            println!("FAIL  {}: {}", check.name, check.detail);
            failures += 1;
        }
    }
    if failures > 0 {
        Err(CliError::Validation(format!("{failures} verification check(s) failed")))
    } else {
        println!("all {} checks passed", results.len());
        Ok(())
    }
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn main_impl<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, out, seed),
        Command::Sweep { config, axis, values, out } => cmd_sweep(&config, &axis, &values, out),
        Command::Verify => cmd_verify(),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.exit_code()
        }
    }
}
