//! Batch workflows behind the `kane` binary: simulate, fit, predict, diagnose, study.
//!
//! Each command is a function of its flags and inputs; every output directory
//! receives one `manifest.json`, which is the only file carrying timestamps.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod diagnose;
pub mod fit;
pub mod manifest;
pub mod output;
pub mod predict;
pub mod simulate;
pub mod study;

pub use diagnose::cmd_diagnose;
pub use fit::cmd_fit;
pub use predict::cmd_predict;
pub use simulate::cmd_simulate;
pub use study::cmd_study;

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "KANE_THREADS";

/// A mistake in how the tool was invoked rather than a failure while running.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// Exit code for an error: 2 for usage errors, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

#[derive(Debug, Parser)]
#[command(name = "kane", version, about = "Probability-of-cascade surfaces with spline Kolmogorov-Arnold networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a simulation scenario and write it as CSV with its true surface.
    Simulate(SimulateArgs),
    /// Threshold a CSV dataset and fit a network (or a Frank-Hall ensemble for ordinal outcomes).
    Fit(FitArgs),
    /// Evaluate a fitted model on a grid or on points from a CSV file.
    Predict(PredictArgs),
    /// Randomized quantile residuals, QQ reference data and optional bootstrap bands.
    Diagnose(DiagnoseArgs),
    /// Monte Carlo study over scenarios and sample sizes.
    Study(StudyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GLayerArg {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScalingArg {
    /// Min-max map fitted on the exceedance rows.
    Retained,
    /// Features are already on the unit cube.
    Unit,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scenario id: A1, A2, B1, B2 or C.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON column mapping (features, triggers, follow_up).
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Quantile level of the trigger threshold.
    #[arg(long, default_value_t = 0.95)]
    pub q: f64,
    /// Spline degree p.
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    /// Uniform knot intervals m.
    #[arg(long, default_value_t = 2)]
    pub intervals: usize,
    /// Number of entries in the width vector, input and output included.
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// Hidden width; defaults to 2d + 1.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Output activation; inferred from the follow-up kind when omitted.
    #[arg(long, value_enum)]
    pub g_layer: Option<GLayerArg>,
    #[arg(long, value_enum, default_value_t = ScalingArg::Retained)]
    pub scaling: ScalingArg,
    /// Initialization seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// L-BFGS iteration cap (overrides the config file).
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// TOML file with fit settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Points per axis of a uniform grid on the training feature box.
    #[arg(long, conflicts_with = "points", required_unless_present = "points")]
    pub grid: Option<usize>,
    /// CSV with one column per feature, in original units.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Residual trajectories.
    #[arg(long, default_value_t = kane_core::diagnostics::DEFAULT_TRAJECTORIES)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bootstrap replicates; no band is computed when omitted.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Points per axis of the bootstrap grid.
    #[arg(long, default_value_t = 21)]
    pub band_grid: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub threads: Option<usize>,
    /// TOML fit settings for bootstrap refits.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    /// Comma-separated scenario ids.
    #[arg(long, value_delimiter = ',', default_value = "A1,A2,B1,B2,C")]
    pub scenarios: Vec<String>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "10000")]
    pub n: Vec<usize>,
    /// Replicates per cell; defaults to 100 for curves and 50 for surfaces.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Base data seed; replicate r uses seed + r.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Worker count from the flag, then the environment, else the pool default.
pub fn resolve_threads(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    if let Some(t) = flag {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        return Ok(Some(t));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(usage(format!("{THREADS_ENV}='{v}' is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

/// Reads fit settings from TOML, or the defaults.
pub fn load_fit_config(path: Option<&PathBuf>) -> anyhow::Result<kane_core::FitConfig> {
    let Some(path) = path else {
        return Ok(kane_core::FitConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    let cfg: kane_core::FitConfig =
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    cfg.validate().map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    Ok(cfg)
}

/// Runs a parsed command and returns the files it wrote.
pub fn run(cli: Cli) -> anyhow::Result<Vec<PathBuf>> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Study(a) => cmd_study(&a),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> anyhow::Result<Vec<PathBuf>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| usage(e.to_string()))?;
    run(cli)
}
