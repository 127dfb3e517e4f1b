//! `pmoe` command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime failures.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pmoe_core::motion::Scenario;

pub mod commands;
pub mod config;

pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(pmoe_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<pmoe_core::Error> for CliError {
    fn from(e: pmoe_core::Error) -> Self {
        match e {
            pmoe_core::Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "pmoe", version, about = "Progressive mixture-of-experts interaction tracking")]
pub struct Cli {
    /// Print nothing but errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a reference interaction clip (or the whole bundled suite).
    Gendata(GendataArgs),
    /// Train a policy from a TOML run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally under a perturbation sweep.
    Eval(EvalArgs),
    /// Roll a clip out deterministically and write a per-frame CSV.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GendataArgs {
    #[arg(long, required_unless_present = "suite")]
    pub scenario: Option<Scenario>,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 4.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, required_unless_present = "suite")]
    pub out: Option<PathBuf>,
    /// Write every bundled clip into `--out-dir` instead.
    #[arg(long, conflicts_with_all = ["scenario", "out"], requires = "out_dir")]
    pub suite: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Character model JSON (built-in humanoid by default).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clip files (the bundled suite when none are given).
    #[arg(long, num_args = 1..)]
    pub clips: Vec<PathBuf>,
    /// `none`, `object` (projectile masses, kg) or `noise` (observation
    /// noise scales).
    #[arg(long, default_value = "none")]
    pub perturb: String,
    /// Comma-separated levels. Defaults: 3,7,15 for object and
    /// 0.1,0.3,0.7 for noise.
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<f64>,
    /// Comma-separated episode seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Worker threads (0 uses every core).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Report JSON path (stdout only when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long, required_unless_present = "stored_targets", conflicts_with = "stored_targets")]
    pub checkpoint: Option<PathBuf>,
    /// Drive the clip with the PD targets stored at generation time.
    #[arg(long)]
    pub stored_targets: bool,
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Character model JSON for `--stored-targets`.
    #[arg(long, conflicts_with = "checkpoint")]
    pub model: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli.command, cli.quiet) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
