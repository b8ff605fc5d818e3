//! Command-line arguments. Every argument struct is serialisable so the full
//! run configuration can be echoed into the artifacts it produces.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, Parser, Serialize)]
#[command(name = "fifm", version, about = "Simulation, perfect sampling and verification for first-in-first-match matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct ModelArgs {
    /// Arrival intensity per colour with respect to the reference measure.
    #[arg(long, default_value_t = 1.0)]
    pub intensity: f64,
    /// Reneging rate.
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Forward simulation driven by a seeded Poisson process.
    Simulate(SimulateArgs),
    /// Exact stationary samples by coupling from the past.
    CftpSample(CftpArgs),
    /// Stationary density of a configuration.
    Density(DensityArgs),
    /// Truncated stationary solve of a bipartite matching model.
    Solve(SolveArgs),
    /// Numerical verification of identities and inequalities.
    Verify {
        #[command(subcommand)]
        check: VerifyCommand,
    },
    /// Discrepancy decay of two coupled processes on a torus.
    Decay(DecayArgs),
    /// Coupling time of a window of a torus.
    Tau(TauArgs),
    /// Monte Carlo regeneration probability.
    Regen(RegenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevelArg {
    None,
    Transitions,
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Space descriptor (JSON file).
    #[arg(long)]
    pub space: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub t_end: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial ordered configuration (JSON file); empty when absent.
    #[arg(long)]
    pub initial: Option<PathBuf>,
    /// Event log, one JSON object per line.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LogLevelArg::Transitions)]
    pub log_level: LogLevelArg,
    /// Occupancy statistics CSV: time, total, reds, blues.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub stats_interval: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GranularityArg {
    Integer,
    Continuous,
}

#[derive(Debug, Args, Serialize)]
pub struct CftpArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    pub replicas: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = GranularityArg::Integer)]
    pub granularity: GranularityArg,
    /// Samples, one JSON object per line.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DensityArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Configuration: an ordered particle list or a list of `{pos, color}` points.
    #[arg(long)]
    pub config: PathBuf,
    /// `red`, `blue`, `free`, or a JSON file of boundary points.
    #[arg(long)]
    pub boundary: Option<String>,
    /// Also report the normalised density.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value_t = fifm::analytics::DEFAULT_TRUNCATION)]
    pub truncation: usize,
    #[arg(long, default_value_t = 0x5eed)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    /// Compatibility graph (JSON file).
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    /// Stationary law CSV: state, probability, product_form, abs_diff.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "check", rename_all = "kebab-case")]
pub enum VerifyCommand {
    /// Local balance of the backward and forward detailed processes.
    LocalBalance(LocalBalanceArgs),
    /// Randomised FKG sweeps.
    Fkg(FkgArgs),
    /// Randomised Holley sweep for two boundary conditions on an interval window.
    Holley(HolleyArgs),
    /// Path-sum identity on explicit or random instances.
    LemmaAux(LemmaAuxArgs),
    /// Truncated stationary solve against the product form.
    ProductForm(ProductFormArgs),
    /// The whole verification suite.
    All(AllArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArg {
    /// JSON report file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct LocalBalanceArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 5)]
    pub max_len: usize,
    /// Added to `mu` on the forward side; nonzero values are a negative control.
    #[arg(long, default_value_t = 0.0)]
    pub mu_perturbation: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub report: ReportArg,
}

#[derive(Debug, Args, Serialize)]
pub struct FkgArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub n_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stationary samples for the positive-association covariances; 0 skips them.
    #[arg(long, default_value_t = 0)]
    pub association_samples: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub report: ReportArg,
}

#[derive(Debug, Args, Serialize)]
pub struct HolleyArgs {
    /// Interval window descriptor (JSON file).
    #[arg(long)]
    pub window: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub zeta1: String,
    #[arg(long)]
    pub zeta2: String,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub n_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also run the swapped boundaries, which must produce a violation.
    #[arg(long)]
    pub negative_control: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub report: ReportArg,
}

#[derive(Debug, Args, Serialize)]
pub struct LemmaAuxArgs {
    /// Comma-separated alphas; with `--betas`, checks one explicit instance.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    /// Random instances per shape `(n, m)` with `n, m <= max-size`.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 5)]
    pub max_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub report: ReportArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ProductFormArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    /// Largest acceptable certified truncation bound.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub report: ReportArg,
}

#[derive(Debug, Args, Serialize)]
pub struct AllArgs {
    /// Reduced sample sizes.
    #[arg(long)]
    pub quick: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub report: ReportArg,
}

#[derive(Debug, Args, Serialize)]
pub struct DecayArgs {
    /// Side of the torus.
    #[arg(long, default_value_t = 20.0)]
    pub side: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 5.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 200)]
    pub replicas: usize,
    /// Density of the initial red particles of the second process.
    #[arg(long, default_value_t = 1.0)]
    pub init_density: f64,
    /// Sampling interval of the curve.
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV: t, beta_S_mean, beta_S_ci_lo, beta_S_ci_hi, bound.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TauArgs {
    #[arg(long, default_value_t = 20.0)]
    pub side: f64,
    /// Side of the centred window.
    #[arg(long, default_value_t = 2.0)]
    pub k_side: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    pub replicas: usize,
    #[arg(long, default_value_t = 20.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub head_start: f64,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV of per-replica coupling times.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RegenArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
