//! `metastab` — command-line front end for the metastability toolkit.
//!
//! Six operations on a model file: `analyze` (full hierarchy report),
//! `tree` (DOT export), `kernel` (limiting transition kernels), `ldp`
//! (level-p rate functionals), `verify` (finite-n check suites), and
//! `simulate` (trajectory sampling). Exit codes: 0 success, 1 failed
//! checks or internal errors, 2 unreadable input or a model violation,
//! 3 ambiguous scale separation, 4 insufficient working precision.

mod commands;
mod output;
mod report;
mod spec_file;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metastab::hierarchy::BuildOptions;
use metastab::Error;

/// Default tolerance for decomposing a measure over a level's wells.
const DEFAULT_DECOMPOSE_TOL: f64 = 1e-6;

// ------------------------------------------------------------------ errors

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid input file.
    Parse(String),
    /// Invalid flag combination or out-of-range argument.
    Usage(String),
    Lib(Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Usage(_) => 2,
            CliError::Lib(Error::Model(_)) => 2,
            CliError::Lib(Error::Ambiguity(_)) => 3,
            CliError::Lib(Error::Precision(_)) | CliError::Lib(Error::Conditioning { .. }) => 4,
            CliError::Lib(_) | CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(msg) => write!(f, "{msg}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

// --------------------------------------------------------------- interface

#[derive(Parser)]
#[command(
    name = "metastab",
    version,
    about = "Metastability analysis of exponentially scaled Markov jump rates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug)]
struct Probes(f64, f64);

fn parse_probes(s: &str) -> Result<Probes, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected two comma-separated values: n1,n2".into());
    }
    let n1: f64 = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
    let n2: f64 = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
    if !(n1.is_finite() && n2.is_finite() && 0.0 < n1 && n1 < n2) {
        return Err("probe points must satisfy 0 < n1 < n2".into());
    }
    Ok(Probes(n1, n2))
}

#[derive(Args)]
struct CommonOpts {
    /// Probe points n1,n2 used to fit prefactors and detect ambiguity.
    #[arg(long, value_parser = parse_probes, global = true)]
    probes: Option<Probes>,

    /// Working precision in bits for extended-precision linear algebra.
    #[arg(long, env = "METASTAB_PRECISION", global = true)]
    precision: Option<u32>,

    /// Tolerance for snapping fitted exponential costs to exact rationals.
    #[arg(long, global = true)]
    tol_cost: Option<f64>,

    /// Tolerance for decomposing a measure over a level's wells.
    #[arg(long, global = true)]
    tol_decompose: Option<f64>,

    /// Write output to this file (atomically) instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format; each command has a natural default.
    #[arg(long, value_enum, global = true)]
    format: Option<OutFormat>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Text,
    Json,
    Csv,
    Dot,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Suite {
    /// Finite-n transition kernels against the limiting kernels.
    KernelConvergence,
    /// Scaled rate functions along recovery sequences against their limits.
    GammaLimsup,
    /// Trace-chain, Dirichlet, and capacity identities on random data.
    AppendixIdentities,
    /// Finite-n capacities against their asymptotic order.
    CapacitySandwich,
    /// Mean-hitting-time upper bounds via capacity and stationary mass.
    HittingBound,
}

#[derive(Subcommand)]
enum Command {
    /// Full metastability report: limit chain, scales, wells, rates,
    /// measures, absorption.
    Analyze {
        /// Model file (JSON).
        spec: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Export the metastability hierarchy as a DOT graph.
    Tree {
        spec: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Limiting transition kernel rows at a level, between scales or at a
    /// reduced time.
    Kernel {
        spec: PathBuf,
        /// Hierarchy level p.
        #[arg(long)]
        level: usize,
        /// Reduced time t in units of the level-p scale.
        #[arg(long, conflicts_with = "between")]
        time: Option<f64>,
        /// Evaluate the kernel in the window between scales p-1 and p
        /// (default when --time is absent).
        #[arg(long)]
        between: bool,
        /// Restrict to one source state (index or name).
        #[arg(long)]
        from: Option<String>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Evaluate the level-p rate functional at a measure, or sweep a grid
    /// of two-well combinations.
    Ldp {
        spec: PathBuf,
        /// Functional level p (0 is the unscaled functional).
        #[arg(long)]
        level: usize,
        /// JSON file with a probability vector over the states.
        #[arg(long, conflicts_with = "grid")]
        measure: Option<PathBuf>,
        /// Sweep k convex combinations of the level's first two well
        /// measures.
        #[arg(long)]
        grid: Option<usize>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run a finite-n verification suite; exits nonzero iff a check fails.
    Verify {
        spec: PathBuf,
        #[arg(long, value_enum)]
        suite: Suite,
        /// Override the suite's default n values.
        #[arg(long, value_delimiter = ',')]
        n_sweep: Option<Vec<f64>>,
        /// Hierarchy level for the gamma-limsup suite.
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Sample trajectories of the chain at a fixed n and report endpoint
    /// statistics.
    Simulate {
        spec: PathBuf,
        /// Scale parameter n at which to instantiate the chain.
        #[arg(long)]
        n: f64,
        /// Start state (index or name).
        #[arg(long)]
        from: String,
        /// Time horizon for each trajectory.
        #[arg(long)]
        horizon: f64,
        /// Base RNG seed; replica r uses seed + r.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        replicas: usize,
        #[command(flatten)]
        common: CommonOpts,
    },
}

// -------------------------------------------------------------- resolution

/// Merge run options: command-line flags win over file options, which win
/// over the defaults.
fn resolve(spec_path: &std::path::Path, common: &CommonOpts) -> Result<commands::Ctx, CliError> {
    let (spec, file_opts) = spec_file::load(spec_path)?;
    let defaults = BuildOptions::default();
    let mut build = BuildOptions {
        probes: common
            .probes
            .map(|p| (p.0, p.1))
            .or(file_opts.probes)
            .unwrap_or(defaults.probes),
        precision_bits: common
            .precision
            .or(file_opts.precision)
            .unwrap_or(defaults.precision_bits),
        tolerances: defaults.tolerances,
    };
    if let Some(c) = file_opts.tol_cost {
        build.tolerances.cost_fit = c;
    }
    if let Some(c) = common.tol_cost {
        build.tolerances.cost_fit = c;
    }
    if let Some(a) = file_opts.tol_probe {
        build.tolerances.probe_agreement = a;
    }
    let tol_decompose = common
        .tol_decompose
        .or(file_opts.tol_decompose)
        .unwrap_or(DEFAULT_DECOMPOSE_TOL);
    if !(tol_decompose > 0.0 && tol_decompose < 1.0) {
        return Err(CliError::Usage("--tol-decompose must lie in (0, 1)".into()));
    }
    Ok(commands::Ctx {
        spec,
        build,
        tol_decompose,
    })
}

fn format_or(common: &CommonOpts, natural: OutFormat, allowed: &[OutFormat]) -> Result<OutFormat, CliError> {
    let chosen = common.format.unwrap_or(natural);
    if allowed.contains(&chosen) {
        Ok(chosen)
    } else {
        let names: Vec<&str> = allowed
            .iter()
            .map(|f| match f {
                OutFormat::Text => "text",
                OutFormat::Json => "json",
                OutFormat::Csv => "csv",
                OutFormat::Dot => "dot",
            })
            .collect();
        Err(CliError::Usage(format!(
            "this command supports --format {}",
            names.join("|")
        )))
    }
}

// ---------------------------------------------------------------- dispatch

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Analyze { spec, common } => {
            let ctx = resolve(&spec, &common)?;
            let fmt = format_or(&common, OutFormat::Text, &[OutFormat::Text, OutFormat::Json])?;
            let tree = ctx.tree()?;
            let report = report::Report::from_tree(&tree);
            let content = match fmt {
                OutFormat::Json => report.to_json(),
                _ => report.to_text(),
            };
            output::emit(common.out.as_deref(), &content)?;
            Ok(0)
        }
        Command::Tree { spec, common } => {
            let ctx = resolve(&spec, &common)?;
            format_or(&common, OutFormat::Dot, &[OutFormat::Dot])?;
            let tree = ctx.tree()?;
            output::emit(common.out.as_deref(), &tree.to_dot())?;
            Ok(0)
        }
        Command::Kernel {
            spec,
            level,
            time,
            between: _,
            from,
            common,
        } => {
            let ctx = resolve(&spec, &common)?;
            let fmt = format_or(&common, OutFormat::Text, &[OutFormat::Text, OutFormat::Csv])?;
            let content =
                commands::kernel(&ctx, level, time, from.as_deref(), fmt == OutFormat::Csv)?;
            output::emit(common.out.as_deref(), &content)?;
            Ok(0)
        }
        Command::Ldp {
            spec,
            level,
            measure,
            grid,
            common,
        } => {
            let ctx = resolve(&spec, &common)?;
            let content = match (&measure, grid) {
                (Some(path), None) => {
                    format_or(&common, OutFormat::Text, &[OutFormat::Text])?;
                    let mu = spec_file::load_measure(path, ctx.spec.num_states())?;
                    commands::ldp_measure(&ctx, level, &mu)?
                }
                (None, Some(points)) => {
                    format_or(&common, OutFormat::Csv, &[OutFormat::Csv])?;
                    commands::ldp_grid(&ctx, level, points)?
                }
                (None, None) => {
                    return Err(CliError::Usage(
                        "ldp needs either --measure <file> or --grid <points>".into(),
                    ))
                }
                (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
            };
            output::emit(common.out.as_deref(), &content)?;
            Ok(0)
        }
        Command::Verify {
            spec,
            suite,
            n_sweep,
            level,
            common,
        } => {
            let ctx = resolve(&spec, &common)?;
            format_or(&common, OutFormat::Csv, &[OutFormat::Csv])?;
            if let Some(ns) = &n_sweep {
                if ns.is_empty() || ns.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
                    return Err(CliError::Usage(
                        "--n-sweep needs a non-empty list of positive values".into(),
                    ));
                }
            }
            let (csv, summary, pass) = commands::verify(&ctx, suite, n_sweep, level)?;
            output::emit(common.out.as_deref(), &csv)?;
            eprintln!("{summary}");
            Ok(if pass { 0 } else { 1 })
        }
        Command::Simulate {
            spec,
            n,
            from,
            horizon,
            seed,
            replicas,
            common,
        } => {
            let ctx = resolve(&spec, &common)?;
            format_or(&common, OutFormat::Csv, &[OutFormat::Csv])?;
            if !(n.is_finite() && n > 0.0) {
                return Err(CliError::Usage("--n must be a finite value > 0".into()));
            }
            let content = commands::simulate(&ctx, n, &from, horizon, seed, replicas)?;
            output::emit(common.out.as_deref(), &content)?;
            Ok(0)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.code());
        }
    }
}
