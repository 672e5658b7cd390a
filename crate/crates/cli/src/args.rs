use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use trajstat_core::error::{Error, Result};

#[derive(Parser, Debug, Serialize)]
#[command(name = "trajstat", version, about = "Fixed-time and fixed-count trajectory ensembles of open quantum systems")]
pub struct Cli {
    /// Worker threads for data-parallel sweeps (falls back to TRAJSTAT_WORKERS).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Hermiticity tolerance for model validation.
    #[arg(long, global = true, default_value_t = 1e-12)]
    pub hermiticity_tol: f64,

    /// Normalization tolerance for the initial state.
    #[arg(long, global = true, default_value_t = 1e-12)]
    pub normalization_tol: f64,

    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn resolved_workers(&self) -> usize {
        self.workers
            .or_else(|| std::env::var("TRAJSTAT_WORKERS").ok().and_then(|v| v.parse().ok()))
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Validate a model file and print a JSON report.
    Validate(ValidateArgs),
    /// Potential g(x,c) or θ(s,c) on a grid.
    Potentials(PotentialsArgs),
    /// Duality table between the s- and x-ensembles.
    Duality(DualityArgs),
    /// Count distribution P_τ(K).
    Counting(CountingArgs),
    /// Concentration exponents on the common shell K = τ k(s).
    Concentration(ConcentrationArgs),
    /// Sample quantum-jump trajectories.
    Sample(SampleArgs),
    /// Reduced output states on [0, τ0] and their distance to the limit state.
    Reduced(ReducedArgs),
    /// Check the phase transforms P1 and P2.
    PhaseCheck(PhaseCheckArgs),
    /// Full pipeline on the three-level renewal model.
    RenewalDemo(RenewalDemoArgs),
    /// One JSON report bundling every equivalence diagnostic.
    EquivalenceReport(EquivalenceArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    X,
    S,
}

#[derive(Args, Debug, Serialize)]
pub struct PotentialsArgs {
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// `start:stop:n`
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    /// Counting field, comma separated.
    #[arg(long, allow_hyphen_values = true, default_value = "")]
    pub c: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct DualityArgs {
    pub model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub s_grid: String,
    #[arg(long, allow_hyphen_values = true, default_value = "")]
    pub c: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CountingArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub tau: f64,
    /// `auto` or an explicit truncation.
    #[arg(long, default_value = "auto")]
    pub kmax: String,
    #[arg(long, allow_hyphen_values = true, default_value = "")]
    pub c: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ConcentrationArgs {
    pub model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub s: f64,
    #[arg(long = "K", default_value = "4,8,16,32")]
    pub k: String,
    #[arg(long, allow_hyphen_values = true, default_value = "")]
    pub c: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    FixedCount,
    FixedTime,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum StartArg {
    /// The model's initial state.
    Psi,
    /// Eigen-ensemble of the stationary state.
    Stationary,
}

#[derive(Args, Debug, Serialize)]
pub struct SampleArgs {
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "psi")]
    pub start: StartArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ReducedArgs {
    pub model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub s: f64,
    #[arg(long)]
    pub tau0: f64,
    /// Comma-separated final times for the s-ensemble.
    #[arg(long)]
    pub tau: Option<String>,
    /// Comma-separated jump counts for the x-ensemble at `x = θ(s)`.
    #[arg(long = "K")]
    pub k: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub nmax: usize,
    #[arg(long, default_value_t = 16)]
    pub nodes: usize,
    #[arg(long, allow_hyphen_values = true, default_value = "")]
    pub c: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub enum PhaseArg {
    P1,
    P2,
}

#[derive(Args, Debug, Serialize)]
pub struct PhaseCheckArgs {
    pub model: PathBuf,
    #[arg(long, value_enum, ignore_case = true)]
    pub kind: PhaseArg,
    #[arg(long, allow_hyphen_values = true)]
    pub phi: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau0: f64,
    #[arg(long, default_value_t = 5.0)]
    pub tau: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.3)]
    pub s: f64,
    #[arg(long = "K", default_value_t = 4)]
    pub k: usize,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.3)]
    pub x: f64,
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub nodes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct RenewalDemoArgs {
    #[arg(long, default_value_t = 1.0)]
    pub omega1: f64,
    #[arg(long, default_value_t = 0.2)]
    pub omega2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo samples for the sampling-based checks.
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EquivalenceArgs {
    pub model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub s: f64,
    #[arg(long)]
    pub tau0: f64,
    #[arg(long, allow_hyphen_values = true, default_value = "")]
    pub c: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub nodes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// `start:stop:n`, endpoints included.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Parse(format!("grid `{spec}` is not start:stop:n"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    Ok(match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    })
}

pub fn parse_list<T: std::str::FromStr>(spec: &str) -> Result<Vec<T>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Parse(format!("cannot parse `{s}` in list `{spec}`"))))
        .collect()
}
