//! Command-line driver: JSON configuration in, FNOD datasets, checkpoints,
//! CSV tables and JSON manifests out.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::ExperimentConfig;

pub const EXIT_FAILED_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_INTERNAL: i32 = 5;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Divergence(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Divergence(m) => write!(f, "training diverged: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mufno::Error> for CliError {
    fn from(e: mufno::Error) -> Self {
        use mufno::Error as E;
        let msg = e.to_string();
        match e {
            E::Config { .. } | E::Truncation { .. } | E::Domain(_) => CliError::Config(msg),
            E::Size(_)
            | E::Format { .. }
            | E::UnsupportedVersion { .. }
            | E::SolverDiverged { .. }
            | E::DegenerateTarget { .. } => CliError::Data(msg),
            E::Io { .. } => CliError::Data(msg),
            E::SweepFailed { .. } => CliError::Divergence(msg),
            E::NumericDivergence { .. } | E::NoConvergence { .. } => CliError::Internal(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mufno", version, about = "Fourier neural operator scaling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamChoice {
    Standard,
    Mup,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Seed for data generation and training; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to the config, then MUFNO_PARALLELISM.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Override a config field, e.g. `--set model.modes=16`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Parametrization to run; defaults to the one in the config.
    #[arg(long, value_enum)]
    pub parametrization: Option<ParamChoice>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train and eval datasets.
    GenData(Common),
    /// Train one model.
    Train(Common),
    /// Run a hyperparameter grid.
    Sweep(Common),
    /// Tune at a small K, rescale, train at a large K.
    Transfer(Common),
    /// Per-layer feature sizes across K.
    Coordcheck(Common),
    /// Gaussian-maximum scaling experiment.
    Normscaling(Common),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(Common),
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match commands::dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
