use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Experiments with nonlocal elliptic operators on uniform grids.
#[derive(Debug, Parser)]
#[command(name = "npde", version)]
pub struct Cli {
    /// TOML file with [kernel], [grid] and [experiment] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Seed for randomized inputs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate an operator on a sampled function.
    Eval(EvalArgs),
    /// Solve a Dirichlet problem.
    Solve(SolveArgs),
    /// Concave envelope and cube decomposition of a subsolution.
    Abp(AbpArgs),
    /// Build and verify the barrier function.
    Barrier(BarrierArgs),
    /// Regularity estimators across orders.
    Regularity(RegularityArgs),
    /// Distance to the second-order limit along an order ladder.
    Limit(LimitArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct GridArgs {
    /// Dimension (1 or 2).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "grid-h")]
    pub grid_h: Option<f64>,
    #[arg(long = "grid-R")]
    pub grid_r: Option<f64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct KernelArgs {
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long = "Lambda")]
    pub upper: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// linear, mplus, mminus or isaacs.
    #[arg(long)]
    pub op: Option<String>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Function tag (see README).
    #[arg(long)]
    pub function: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub op: Option<String>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// ball or cube.
    #[arg(long)]
    pub omega: Option<String>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rhs: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub boundary: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    /// policy or explicit.
    #[arg(long)]
    pub method: Option<String>,
}

#[derive(Debug, Args)]
pub struct AbpArgs {
    #[arg(long)]
    pub sigma: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// torsion or cap.
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long = "max-depth")]
    pub max_depth: Option<usize>,
    #[arg(long = "C")]
    pub c: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BarrierArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma0: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long = "Lambda")]
    pub upper: Option<f64>,
    #[arg(long = "grid-h")]
    pub grid_h: Option<f64>,
    /// Orders written to verify.csv.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct RegularityArgs {
    /// holder, harnack, tail, c1a or all.
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct LimitArgs {
    /// Row-major entries of A: one value for n = 1, four for n = 2.
    #[arg(long = "A", value_delimiter = ',', allow_negative_numbers = true)]
    pub matrix: Option<Vec<f64>>,
    /// gaussian or cutquad.
    #[arg(long)]
    pub probe: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[command(flatten)]
    pub grid: GridArgs,
}
