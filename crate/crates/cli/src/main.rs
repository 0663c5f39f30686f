mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use autobid::MechanismKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(
    name = "autobid",
    version,
    about = "Position auctions with personalized reserves and ROAS-constrained autobidders"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Write results here instead of stdout; the run manifest goes to `<out>.manifest.json`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// ROAS slack below zero still counted as feasible.
    #[arg(long, global = true, default_value_t = autobid::welfare::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Run one bid profile and report welfare, ROAS slack and optionally bounds.
    Run(RunArgs),
    /// Closed-form welfare bounds for each bidder.
    Bounds(BoundsArgs),
    /// Feasibility and winner pattern over a grid of uniform multipliers.
    Region(RegionArgs),
    /// Lowest welfare ratio over feasible competitor profiles.
    WorstCase(WorstCaseArgs),
    /// Two-phase multiplier dynamics on synthetic markets.
    Dynamics(DynamicsArgs),
    /// Loss ratio and competitor ROAS violation on the impossibility family.
    Impossibility(ImpossibilityArgs),
    /// Empirical CDF of welfare ratios for one bid profile.
    Cdf(CdfArgs),
    /// Re-run the invocation recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Run(_) => "run",
            Command::Bounds(_) => "bounds",
            Command::Region(_) => "region",
            Command::WorstCase(_) => "worst-case",
            Command::Dynamics(_) => "dynamics",
            Command::Impossibility(_) => "impossibility",
            Command::Cdf(_) => "cdf",
            Command::Replay(_) => "replay",
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Command::Run(a) => a.profile.paths(&a.instance),
            Command::Cdf(a) => a.profile.paths(&a.instance),
            Command::Bounds(a) => vec![a.instance.clone()],
            Command::Region(a) => vec![a.instance.clone()],
            Command::WorstCase(a) => vec![a.instance.clone()],
            Command::Replay(a) => vec![a.manifest.clone()],
            Command::Gen(_) | Command::Dynamics(_) | Command::Impossibility(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceKind {
    Motivating,
    Tightness,
    Impossibility,
    FigCompare,
    CoveringExample,
    Random,
    Separated,
    Market,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: InstanceKind,
    /// Value scale of the motivating example.
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha1: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub y: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 2)]
    pub slots: usize,
    #[arg(long, default_value_t = 2.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub zero_prob: f64,
    /// Replace reserves with uniform-scale advice of this accuracy.
    #[arg(long)]
    pub advice_beta: Option<f64>,
}

/// Bid profile given either as uniform multipliers or as a bid matrix file.
#[derive(Debug, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct ProfileArgs {
    /// One multiplier per bidder, or a single one for everybody.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub alphas: Option<Vec<f64>>,
    /// JSON bid matrix (nested arrays, one row per bidder).
    #[arg(long)]
    pub bids: Option<PathBuf>,
}

impl ProfileArgs {
    fn paths(&self, instance: &std::path::Path) -> Vec<PathBuf> {
        std::iter::once(instance.to_path_buf())
            .chain(self.bids.clone())
            .collect()
    }
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    pub instance: PathBuf,
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long, default_value_t = MechanismKind::Vcg)]
    pub mechanism: MechanismKind,
    /// Replace reserves with uniform-scale advice of this accuracy, seeded by `--seed`.
    #[arg(long)]
    pub beta_advice: Option<f64>,
    /// Append bound columns.
    #[arg(long)]
    pub bounds: bool,
    /// Accuracy used by the bounds; defaults to the advice accuracy or the reserves' own.
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct BoundsArgs {
    pub instance: PathBuf,
    /// One multiplier per bidder, or a single one for everybody.
    #[arg(long, value_delimiter = ',', required = true)]
    pub alphas: Vec<f64>,
    /// Defaults to the largest beta the instance reserves satisfy.
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct GridArgs {
    #[arg(long, default_value_t = 1.0)]
    pub lo: f64,
    #[arg(long, default_value_t = 5.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 401)]
    pub points: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct RegionArgs {
    pub instance: PathBuf,
    #[arg(long, default_value_t = MechanismKind::Vcg)]
    pub mechanism: MechanismKind,
    /// Bidder whose welfare ratio is reported.
    #[arg(long, default_value_t = 0)]
    pub bidder: usize,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Uniform competitor multipliers on a grid.
    Uniform,
    /// Per-entry competitor bids, enumerated or sampled.
    General,
}

#[derive(Debug, Args, Serialize)]
pub struct WorstCaseArgs {
    pub instance: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub bidder: usize,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = MechanismKind::Vcg)]
    pub mechanism: MechanismKind,
    #[arg(long, value_enum, default_value_t = SearchMode::Uniform)]
    pub mode: SearchMode,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Samples drawn in general mode when the grid is too large to enumerate.
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct DynamicsArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75")]
    pub betas: Vec<f64>,
    /// Number of markets, seeded `--seed`, `--seed + 1`, ...
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 500)]
    pub rounds: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.8")]
    pub z: Vec<f64>,
    #[arg(long, default_value_t = MechanismKind::Vcg)]
    pub mechanism: MechanismKind,
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value_t = 3)]
    pub slots: usize,
    /// Also write `seed,beta,z,theta` rows for every market here.
    #[arg(long)]
    pub per_seed: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ImpossibilityArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,50,200")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Competitor multiplier; defaults to `alpha0 (1 + 1/K)`.
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct CdfArgs {
    pub instance: PathBuf,
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long, default_value_t = MechanismKind::Vcg)]
    pub mechanism: MechanismKind,
    /// Evaluation points; defaults to 0, 0.05, ..., 1.
    #[arg(long, value_delimiter = ',')]
    pub z: Option<Vec<f64>>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Parses `argv`, runs it and emits results and manifest.
fn execute(argv: Vec<OsString>) -> Result<()> {
    let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| e.exit());
    if let Command::Replay(r) = &cli.command {
        let manifest = RunManifest::read(&r.manifest)?;
        let mut replayed: Vec<OsString> = vec![argv[0].clone()];
        replayed.extend(manifest.argv.iter().map(OsString::from));
        if let Some(out) = &cli.out {
            replayed.push("--out".into());
            replayed.push(out.into());
        }
        return execute(replayed);
    }

    let output = commands::dispatch(&cli)?;
    match &cli.out {
        Some(path) => std::fs::write(path, &output).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{output}"),
    }
    RunManifest {
        subcommand: cli.command.name().to_string(),
        argv: argv[1..].iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        parameters: serde_json::to_value(&cli.command)?,
        seed: cli.seed,
        tolerance: cli.tolerance,
        inputs: cli.command.inputs(),
        output: cli.out.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    }
    .emit()
}

fn configure_threads() -> Result<()> {
    if let Ok(s) = std::env::var("AUTOBID_THREADS") {
        let n: usize = s
            .parse()
            .with_context(|| format!("AUTOBID_THREADS must be a positive integer, got `{s}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match configure_threads().and_then(|_| execute(std::env::args_os().collect())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
