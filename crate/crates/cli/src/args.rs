use std::path::PathBuf;

use aoi_core::experiments::Reference;
use aoi_core::{DelayModel, Regroup, Scheme};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "aoi",
    version,
    about = "Age of Information for multicast status updates with earliest-k, pre-selected-k and wait-for-all stopping"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form and approximate average age with its breakdown.
    Analyze(AnalyzeArgs),
    /// Monte Carlo estimate of the average age.
    Simulate(SimulateArgs),
    /// Age-minimizing stopping threshold.
    Optimize(OptimizeArgs),
    /// Regenerate one of the threshold or scaling tables.
    Experiment(ExperimentArgs),
    /// Simulation-versus-closed-form agreement grid.
    Validate(ValidateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Simulate(_) => "simulate",
            Command::Optimize(_) => "optimize",
            Command::Experiment(_) => "experiment",
            Command::Validate(_) => "validate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    WaitForAll,
    EarliestK,
    #[value(name = "pre-selected-k")]
    PreselectedK,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::WaitForAll => Scheme::WaitForAll,
            SchemeArg::EarliestK => Scheme::EarliestK,
            SchemeArg::PreselectedK => Scheme::PreselectedK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegroupArg {
    PerUpdate,
    Fixed,
}

impl From<RegroupArg> for Regroup {
    fn from(r: RegroupArg) -> Self {
        match r {
            RegroupArg::PerUpdate => Regroup::PerUpdate,
            RegroupArg::Fixed => Regroup::Fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    ClosedForm,
    Renewal,
}

impl From<ReferenceArg> for Reference {
    fn from(r: ReferenceArg) -> Self {
        match r {
            ReferenceArg::ClosedForm => Reference::ClosedForm,
            ReferenceArg::Renewal => Reference::Renewal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig4,
    Fig5,
    Fig6,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LinkArgs {
    /// Exponential rate of the link delay.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub lambda: f64,
    /// Constant part of the link delay.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    pub shift: f64,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Number of acknowledgements to wait for.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// Threshold as a fraction of n; k = round(alpha n).
    #[arg(long, conflicts_with = "k", value_parser = unit_interval)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    pub link: LinkArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    pub link: LinkArgs,
    /// Hyper-exponential delay as "rate1,rate2,...:weight1,weight2,...".
    #[arg(long, conflicts_with_all = ["lambda", "shift"], value_parser = hyperexp)]
    pub hyperexp: Option<DelayModel>,
    #[command(flatten)]
    pub effort: EffortArgs,
    #[arg(long, value_enum, default_value = "per-update")]
    pub regroup: RegroupArg,
    /// Also write one CSV row per round to this file (single replication only).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EffortArgs {
    /// Measured update rounds per replication.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub updates: Option<u64>,
    /// Discarded rounds before measurement.
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long, env = "AOI_SEED")]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub replications: Option<u64>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[command(flatten)]
    pub link: LinkArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub figure: Figure,
    /// Number of nodes (fig4, fig5) or largest number of nodes (fig6).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
    /// Spacing of the k grid (fig4, fig5).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub step: Option<u64>,
    /// Link rate; a comma-separated list for fig5 (fig5, fig6).
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    pub lambda: Vec<f64>,
    /// Constant part of the link delay (fig5, fig6).
    #[arg(long, value_parser = non_negative)]
    pub shift: Option<f64>,
    /// Pre-selected group evolution (fig5).
    #[arg(long, value_enum)]
    pub regroup: Option<RegroupArg>,
    /// Skip simulation and tabulate closed forms only (fig6).
    #[arg(long)]
    pub analytic_only: bool,
    #[command(flatten)]
    pub effort: EffortArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub updates: Option<u64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long, env = "AOI_SEED")]
    pub seed: Option<u64>,
    /// Closed form the simulated pre-selected-k cells are compared against.
    #[arg(long, value_enum, default_value = "closed-form")]
    pub reference: ReferenceArg,
    /// Largest tolerated |z| per cell.
    #[arg(long, default_value_t = 4.0, value_parser = positive)]
    pub sigma: f64,
    /// Only check k = n.
    #[arg(long)]
    pub full_threshold_only: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| format!("`{s}` is not a number: {e}"))
}

fn positive(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and positive"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and non-negative"))
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must lie in (0, 1]"))
    }
}

fn hyperexp(s: &str) -> Result<DelayModel, String> {
    let (rates, weights) = s
        .split_once(':')
        .ok_or_else(|| "expected \"rate1,rate2,...:weight1,weight2,...\"".to_string())?;
    let list = |part: &str| {
        part.split(',')
            .map(parse_f64)
            .collect::<Result<Vec<_>, _>>()
    };
    DelayModel::hyper_exponential(list(rates)?, list(weights)?).map_err(|e| e.to_string())
}
