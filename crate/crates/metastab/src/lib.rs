//! Metastability analysis for one-parameter families of continuous-time Markov
//! chains on finite directed graphs.
//!
//! The object of study is a family of irreducible chains X^n on a fixed finite
//! state space whose jump rates scale exponentially in the parameter n:
//! R_n(x,y) = c·e^(−e·n) with c > 0 and e ≥ 0. As n grows the chain develops a
//! hierarchy of metastable wells and time scales, and this crate computes that
//! hierarchy symbolically while double-checking every claim against an
//! extended-precision numerical engine at finite n.
//!
//! The crate is organized around five modules:
//!
//! * [`scale_algebra`] — exact arithmetic on sequences a·e^(−b·n): the
//!   asymptotic semiring, matrix-tree stationary asymptotics, detailed-balance
//!   certification, and widest-path capacity orders.
//! * [`finite_chain`] — the numerical engine: MPFR-backed stationary solves,
//!   hitting probabilities, capacities, trace processes, Poisson equations,
//!   transition kernels, the level-two large-deviations rate function, and
//!   exact-jump simulation.
//! * [`hierarchy`] — the metastability tree: wells per level, time scales
//!   θ^(p)_n, reduced chains, metastable measures, absorption matrices, and
//!   the limiting transition kernels.
//! * [`gamma_expansion`] — the expansion of the rate function along the time
//!   scales: the functionals ℐ^(0) and ℐ^(p) in closed and variational form,
//!   measure decompositions, recovery sequences, and Γ-convergence sweeps.
//! * [`models`] — built-in model constructors: 1-D energy landscapes and
//!   seeded random reversible specifications.

pub mod finite_chain;
pub mod gamma_expansion;
pub mod hierarchy;
pub mod models;
pub mod scale_algebra;

/// Re-export of the extended-precision arithmetic crate used throughout the
/// public API, so downstream code can name `Float` and `Rational` without a
/// separately pinned dependency.
pub use rug;

pub(crate) mod graph;

/// Errors shared by every module of the crate.
///
/// The taxonomy matters to callers: command-line consumers map `Model` to a
/// parse/model exit code, `Ambiguity` to its own code, `Precision` and
/// `Conditioning` to a shared insufficient-precision code (both are cured by
/// raising the working precision), and everything else to a generic failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The input violates a model assumption (irreducibility, positive
    /// prefactors, non-negative costs, a non-empty zero-cost edge set, …).
    #[error("model violation: {0}")]
    Model(String),

    /// A state space too large for an exact enumeration step.
    #[error("state space too large: {0}")]
    Capacity(String),

    /// The two-probe classification of a limit could not be resolved.
    #[error("ambiguous probe classification: {0}")]
    Ambiguity(String),

    /// The requested computation does not fit in the precision budget.
    #[error("precision budget exceeded: {0}")]
    Precision(String),

    /// A linear system was numerically singular at working precision.
    #[error("ill-conditioned linear system: relative residual {residual:e}")]
    Conditioning { residual: f64 },

    /// An iterative solver hit its iteration cap.
    #[error("iteration cap exceeded: {0}")]
    Convergence(String),

    /// The operation is not defined for this input (e.g. closed forms on
    /// non-reversible specifications).
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Arguments outside the operation's domain (overlapping sets, bad
    /// indices, measures off their required support, …).
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Default working precision, in bits, for the finite-n engine.
pub const DEFAULT_PRECISION: u32 = 256;
