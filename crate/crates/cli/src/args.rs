use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use npasa_core::SolverConfig;

#[derive(Debug, Parser)]
#[command(name = "npasa", version, about = "Two-phase nonlinear polyhedral active set solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a problem file or a built-in problem.
    Solve(Box<SolveArgs>),
    /// List the built-in problems, or print one in the problem file format.
    Corpus(CorpusArgs),
    /// Check derivatives, projections and any reference solution of a problem.
    Check(CheckArgs),
    /// Fit the convergence order of the tail of a solve log.
    Rate(RateArgs),
}

/// Exactly one problem source.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Problem file (TOML).
    #[arg(long, value_name = "FILE")]
    pub problem: Option<PathBuf>,
    /// Name of a built-in problem.
    #[arg(long, value_name = "NAME")]
    pub corpus_name: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub source: Source,
    /// Starting point, comma separated. Defaults to the problem's own start.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Starting equality multipliers, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lambda0: Option<Vec<f64>>,
    /// Write the per-iteration log as JSON lines.
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Print this problem in the problem file format.
    #[arg(long, value_name = "NAME")]
    pub dump: Option<String>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub source: Source,
    /// Central difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub fd_step: f64,
    /// Number of sample points for the derivative check and projection sweep.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Largest accepted relative derivative error.
    #[arg(long, default_value_t = 1e-6)]
    pub derivative_tol: f64,
    /// Largest accepted KKT or feasibility residual.
    #[arg(long, default_value_t = 1e-8)]
    pub kkt_tol: f64,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    /// Log written by `solve --log`.
    pub log: PathBuf,
    /// Number of trailing accepted entries to fit.
    #[arg(long, default_value_t = 3)]
    pub window: usize,
}

/// One flag per solver parameter.
#[derive(Debug, Default, Args)]
pub struct ConfigFlags {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub lambda_bar: Option<f64>,
    #[arg(long)]
    pub q0: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub p_init: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub inner_tol: Option<f64>,
    #[arg(long)]
    pub s_min: Option<f64>,
    #[arg(long)]
    pub floor_fraction: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub max_constraint_iters: Option<usize>,
    #[arg(long)]
    pub max_multiplier_iters: Option<usize>,
    #[arg(long)]
    pub max_backtracks: Option<usize>,
    #[arg(long)]
    pub max_inner_iters: Option<usize>,
    #[arg(long)]
    pub exact_eta_enumeration: bool,
}

impl ConfigFlags {
    /// Overrides the defaults with every flag that was given.
    pub fn to_config(&self) -> SolverConfig {
        let mut c = SolverConfig::default();
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        set!(
            eps, theta, phi, lambda_bar, q0, alpha, beta, sigma, tau, p_init, delta, gamma, inner_tol, s_min,
            floor_fraction, max_outer, max_constraint_iters, max_multiplier_iters, max_backtracks, max_inner_iters
        );
        c.exact_eta_enumeration |= self.exact_eta_enumeration;
        c
    }
}
