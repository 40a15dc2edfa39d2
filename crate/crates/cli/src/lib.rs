//! Command-line driver around `dualsteer`.
//!
//! Every command writes a [`RunManifest`] next to its outputs; `replay`
//! re-runs the recorded arguments. Exit codes: 0 success, 2 usage error,
//! 1 runtime error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

pub mod commands;
pub mod manifest;

pub use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dualsteer", version, about = "Dual-probe logit steering over frozen hidden states")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted synthetic dataset.
    Synth(SynthArgs),
    /// Split a dataset and train steering heads on the few-shot part.
    Train(TrainArgs),
    /// Score heads against the zero-shot baseline.
    Eval(EvalArgs),
    /// Collapse, geometry and group-dynamics reports.
    Diagnose(DiagnoseArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = parse_usize)]
    pub d: Option<usize>,
    #[arg(long, value_parser = parse_usize)]
    pub n_per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Distance of the Left/Right class centers from the origin.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub center_tightness: Option<f64>,
    #[arg(long)]
    pub collapse_bias: Option<f64>,
    /// Comma-separated facet names.
    #[arg(long, value_delimiter = ',')]
    pub facets: Option<Vec<String>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Gd,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Heads file to write; the loss summary goes to `<out>.loss.tsv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Share of each facet used for training.
    #[arg(long, default_value_t = 0.2, value_parser = parse_fraction)]
    pub fraction: f64,
    /// Seeds both the split and the head initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split over the pooled data instead of per facet.
    #[arg(long)]
    pub no_stratify: bool,
    /// Train one head shared by all facets.
    #[arg(long)]
    pub global: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Stop after this many epochs without improvement.
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate only the held-out part of the split recorded in the heads file.
    #[arg(long)]
    pub heldout: bool,
    #[arg(long)]
    pub out_json: PathBuf,
    #[arg(long)]
    pub out_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Heads file; without it the steered columns are left out.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if f > 0.0 && f < 1.0 {
        Ok(f)
    } else {
        Err(format!("must be strictly between 0 and 1, got {f}"))
    }
}

/// How a command failed.
#[derive(Debug)]
pub enum Failure {
    Usage(clap::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(e) if e.exit_code() == 0 => EXIT_OK,
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<dualsteer::Error> for Failure {
    fn from(e: dualsteer::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

/// A usage error attached to `subcommand`, rendered with its usage line.
pub(crate) fn usage_error(subcommand: &str, message: impl std::fmt::Display) -> Failure {
    let mut sub = Cli::command()
        .find_subcommand(subcommand)
        .expect("known subcommand")
        .clone()
        .bin_name(format!("dualsteer {subcommand}"));
    Failure::Usage(sub.error(ErrorKind::ValueValidation, message))
}

/// Parses `args` (without the program name) and runs the command.
pub fn execute<I, T>(args: I) -> Result<(), Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let cli = Cli::try_parse_from(std::iter::once("dualsteer".to_string()).chain(argv.iter().cloned()))
        .map_err(Failure::Usage)?;
    match cli.command {
        Command::Synth(a) => commands::synth::run(&a, &argv),
        Command::Train(a) => commands::train::run(&a, &argv),
        Command::Eval(a) => commands::eval::run(&a, &argv),
        Command::Diagnose(a) => commands::diagnose::run(&a, &argv),
        Command::Replay(a) => replay(&a),
    }
}

fn replay(args: &ReplayArgs) -> Result<(), Failure> {
    let manifest = RunManifest::load(&args.manifest)?;
    if manifest.argv.first().map(String::as_str) == Some("replay") {
        return Err(Failure::Runtime(anyhow::anyhow!("manifest records a replay; refusing to recurse")));
    }
    execute(manifest.argv)
}

/// Runs and reports like the binary does, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match execute(args) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            match &failure {
                Failure::Usage(e) => {
                    let _ = e.print();
                }
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            failure.exit_code()
        }
    }
}
