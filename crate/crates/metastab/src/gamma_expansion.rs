//! Expansion of the level-two rate function along the metastable time scales.
//!
//! At each scale the finite-n rate function ℐ_n, multiplied by the scale
//! θ^(p)_n, converges to a limiting functional ℐ^(p) that is finite only on
//! convex combinations of the level's metastable measures. This module
//! evaluates those limits in two independent ways — a closed Dirichlet-form
//! expression available under detailed balance, and a variational supremum
//! valid in general — decomposes measures into metastable combinations,
//! builds the measure sequences that attain the limit (recovery sequences),
//! and sweeps the scaled finite-n rate function against its target.
//!
//! The zero-order functional lives on the full state space and is driven by
//! the surviving-rate generator of the limit chain; the level-p functionals
//! live on the wells of the reduced chain. In both cases the closed form
//! decomposes over the strongly connected components of the relevant rate
//! graph: components pay an internal Dirichlet form with respect to their own
//! stationary measure, and every edge leaving a component is paid in full as
//! a leak term. The variational form reproduces the same decomposition
//! through its divergent directions, which is what makes the two routes
//! genuinely independent checks of one another.

use crate::finite_chain::linalg::Mat;
use crate::finite_chain::{dv_sup, FiniteChain};
use crate::hierarchy::{class_stationary, sharp_measure, LimitChain, MetastableTree};
use crate::rug::Float;
use crate::scale_algebra::detailed_balance_check;
use crate::{graph, Error, Result};

/// Default total-variation tolerance for [`decompose`]: inputs are either
/// exact convex combinations or numeric limits converging well past this.
pub const DEFAULT_DECOMPOSE_TOL: f64 = 1e-6;

/// Working precision for the limit-side variational solves. The inputs are
/// double-precision rate limits, so this leaves ~45 guard digits.
const LIMIT_PRECISION: u32 = 128;

/// A non-negative extended real: the level-p functionals take the value +∞
/// off their domain, and the distinction is structural, never a large float.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn is_infinite(&self) -> bool {
        matches!(self, ExtReal::Infinite)
    }

    /// The finite value, if there is one.
    pub fn value(&self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(*v),
            ExtReal::Infinite => None,
        }
    }
}

/// A level-p functional value together with the uncertainty band inherited
/// from the probe disagreement of the reduced rates, when that disagreement
/// is large enough to matter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: ExtReal,
    /// `Some((lo, hi))` when the reduced rates disagreed across probes by
    /// more than 1%; `None` when the rates are trusted.
    pub uncertainty: Option<(f64, f64)>,
}

/// A measure written as a convex combination of a level's metastable
/// measures.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub level: usize,
    /// Convex weights over the level's wells (non-negative, sum one).
    pub weights: Vec<f64>,
    /// Total-variation distance between the input and its reconstruction
    /// Σ_j ω_j π^(p)_j.
    pub residual: f64,
}

/// The data needed to evaluate the limiting functionals: the tree, the
/// per-class stationary measures of the limit chain, the drain depth of
/// every state, and whether the closed forms are available.
#[derive(Clone, Debug)]
pub struct RateExpansion {
    pub tree: MetastableTree,
    /// Stationary measure of each closed class of the limit chain, as a
    /// distribution on the full state space (the first-generation metastable
    /// measures).
    pub class_measures: Vec<Vec<f64>>,
    /// Stationary measure of the restriction of the limit chain to each
    /// multi-state transient class, spread onto the full state space.
    pub transient_measures: Vec<Vec<f64>>,
    /// Length of the longest path in the class condensation of the limit
    /// chain from each state's class to a closed class; zero on the closed
    /// classes themselves.
    pub depth: Vec<usize>,
    /// Whether the underlying specification satisfies detailed balance,
    /// certified by exact order arithmetic; gates the closed forms.
    pub reversible: bool,
    /// Dense limit rates, cached for the functional evaluations.
    r0: Vec<Vec<f64>>,
}

impl RateExpansion {
    pub fn new(tree: MetastableTree) -> Result<RateExpansion> {
        let limit = &tree.limit;
        let n = limit.num_states;
        let class_measures = limit
            .closed_classes
            .iter()
            .map(|class| sharp_measure(limit, class))
            .collect::<Result<Vec<_>>>()?;
        let transient_measures = limit
            .transient_classes
            .iter()
            .map(|class| sharp_measure(limit, class))
            .collect::<Result<Vec<_>>>()?;
        let depth = depths(limit);
        let reversible = matches!(detailed_balance_check(&tree.spec), Ok(None));
        let mut r0 = vec![vec![0.0; n]; n];
        for (x, y, pref) in &limit.surviving_edges {
            r0[*x][*y] = pref.to_f64();
        }
        Ok(RateExpansion { tree, class_measures, transient_measures, depth, reversible, r0 })
    }

    pub fn limit(&self) -> &LimitChain {
        &self.tree.limit
    }
}

/// Longest condensation path from each state's class to a closed class.
fn depths(limit: &LimitChain) -> Vec<usize> {
    let n = limit.num_states;
    let mut cid = vec![usize::MAX; n];
    let mut closed = Vec::new();
    for class in &limit.closed_classes {
        for &x in class {
            cid[x] = closed.len();
        }
        closed.push(true);
    }
    for class in &limit.transient_classes {
        for &x in class {
            cid[x] = closed.len();
        }
        closed.push(false);
    }
    for c in cid.iter_mut() {
        if *c == usize::MAX {
            *c = closed.len();
            closed.push(false);
        }
    }
    let ncl = closed.len();
    let mut succ = vec![std::collections::BTreeSet::new(); ncl];
    for (x, y, _) in &limit.surviving_edges {
        if cid[*x] != cid[*y] {
            succ[cid[*x]].insert(cid[*y]);
        }
    }
    // Longest-path relaxation over the acyclic class graph; stabilizes after
    // at most ncl rounds.
    let mut d = vec![0usize; ncl];
    for _ in 0..=ncl {
        let mut changed = false;
        for a in 0..ncl {
            if closed[a] {
                continue;
            }
            let far = succ[a]
                .iter()
                .map(|&b| d[b])
                .max()
                .expect("every non-closed class drains somewhere");
            if d[a] != far + 1 {
                d[a] = far + 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).map(|x| d[cid[x]]).collect()
}

fn validate_measure(mu: &[f64], n: usize) -> Result<()> {
    if mu.len() != n {
        return Err(Error::Domain(format!(
            "measure has {} entries, the state space has {n}",
            mu.len()
        )));
    }
    let mut total = 0.0;
    for (x, &v) in mu.iter().enumerate() {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("measure entry {v} at state {x}")));
        }
        total += v;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("measure mass {total}, expected 1")));
    }
    Ok(())
}

/// Writes `mu` as a convex combination of the level-p metastable measures,
/// if the mass off the wells stays within `tol` and the normalized
/// restriction to every loaded well matches the well's measure within `tol`
/// in total variation. Levels run from 1 to 𝔮+1 (the root).
pub fn decompose(
    tree: &MetastableTree,
    p: usize,
    mu: &[f64],
    tol: f64,
) -> Option<Decomposition> {
    assert!(p >= 1 && p <= tree.levels.len(), "level {p} out of range");
    let level = tree.level(p);
    let n = tree.limit.num_states;
    assert_eq!(mu.len(), n, "measure length mismatch");

    let mut on_wells = vec![false; n];
    for well in &level.wells {
        for &x in well {
            on_wells[x] = true;
        }
    }
    let off: f64 = mu.iter().zip(&on_wells).filter(|&(_, &w)| !w).map(|(v, _)| v).sum();
    if off > tol {
        return None;
    }

    let mut weights: Vec<f64> = level
        .wells
        .iter()
        .map(|well| well.iter().map(|&x| mu[x]).sum())
        .collect();
    for (j, well) in level.wells.iter().enumerate() {
        if weights[j] <= tol {
            // Mass below the tolerance cannot violate it.
            continue;
        }
        let pi = &level.metastable_measures[j];
        let dist: f64 = well.iter().map(|&x| (mu[x] / weights[j] - pi[x]).abs()).sum::<f64>() / 2.0;
        if dist > tol {
            return None;
        }
    }

    // Reconstruction defect, reported but no longer gating.
    let mut recon = vec![0.0; n];
    for (j, pi) in level.metastable_measures.iter().enumerate() {
        for (r, v) in recon.iter_mut().zip(pi) {
            *r += weights[j] * v;
        }
    }
    let residual: f64 =
        mu.iter().zip(&recon).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;

    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    Some(Decomposition { level: p, weights, residual })
}

/// Symmetrized Dirichlet form of √(μ/m) over one class, with respect to the
/// class's stationary measure m and the restriction of the rates to the
/// class: (1/2) Σ_{x,y} m(x) r(x,y) (√(μ(y)/m(y)) − √(μ(x)/m(x)))².
fn class_dirichlet(r: &[Vec<f64>], class: &[usize], m_full: &[f64], mu: &[f64]) -> f64 {
    let g: Vec<f64> = class.iter().map(|&x| (mu[x] / m_full[x]).sqrt()).collect();
    let mut total = 0.0;
    for (a, &x) in class.iter().enumerate() {
        for (b, &y) in class.iter().enumerate() {
            if x != y && r[x][y] > 0.0 {
                let d = g[b] - g[a];
                total += 0.5 * m_full[x] * r[x][y] * d * d;
            }
        }
    }
    total
}

/// Zero-order limiting rate functional in closed form, for reversible
/// specifications: Dirichlet forms of √(μ/π) over the closed classes, the
/// same over each multi-state transient class with respect to its internal
/// stationary measure, leak terms for every edge leaving a transient class,
/// and the full exit rate for the remaining free states.
pub fn i0_closed(exp: &RateExpansion, mu: &[f64]) -> Result<f64> {
    if !exp.reversible {
        return Err(Error::Unsupported(
            "closed form requires detailed balance; use i0_variational".into(),
        ));
    }
    let limit = exp.limit();
    let n = limit.num_states;
    validate_measure(mu, n)?;

    let mut in_class = vec![false; n];
    let mut total = 0.0;
    for (class, pi) in limit.closed_classes.iter().zip(&exp.class_measures) {
        total += class_dirichlet(&exp.r0, class, pi, mu);
        for &x in class {
            in_class[x] = true;
        }
    }
    for (class, nu) in limit.transient_classes.iter().zip(&exp.transient_measures) {
        total += class_dirichlet(&exp.r0, class, nu, mu);
        for &x in class {
            in_class[x] = true;
            // Leak out of the class.
            for y in 0..n {
                if !class.contains(&y) {
                    total += mu[x] * exp.r0[x][y];
                }
            }
        }
    }
    for x in 0..n {
        if !in_class[x] {
            let lambda: f64 = exp.r0[x].iter().sum();
            total += mu[x] * lambda;
        }
    }
    Ok(total)
}

/// Zero-order limiting rate functional in variational form,
/// sup_{u>0} −Σ (μ(x)/u(x)) R₀(x,y) (u(y) − u(x)), valid without detailed
/// balance. Divergent directions of the reducible limit generator are
/// resolved exactly by the component decomposition of the solver.
pub fn i0_variational(exp: &RateExpansion, mu: &[f64]) -> Result<f64> {
    let n = exp.limit().num_states;
    validate_measure(mu, n)?;
    let prec = LIMIT_PRECISION;
    let mut rates = Mat::zeros(prec, n, n);
    for x in 0..n {
        for y in 0..n {
            if x != y && exp.r0[x][y] > 0.0 {
                *rates.at_mut(x, y) = Float::with_val(prec, exp.r0[x][y]);
            }
        }
    }
    let weights: Vec<Float> = mu.iter().map(|&v| Float::with_val(prec, v)).collect();
    Ok(dv_sup(&rates, &weights)?.to_f64())
}

/// The uncertainty band attached to a value derived from probe-estimated
/// rates: `None` when the worst relative probe disagreement `spread` is at
/// most 1%, otherwise the value scaled down and up by the disagreement
/// (clamped below at zero).
pub fn uncertainty_band(value: f64, spread: f64) -> Option<(f64, f64)> {
    if spread > 0.01 {
        Some(((value * (1.0 - spread)).max(0.0), value * (1.0 + spread)))
    } else {
        None
    }
}

fn level_spread(level: &crate::hierarchy::Level) -> f64 {
    let mut s = 0.0f64;
    for (row_p, row_s) in level.rate_positive.iter().zip(&level.rate_spread) {
        for (&pos, &sp) in row_p.iter().zip(row_s) {
            if pos && sp > s {
                s = sp;
            }
        }
    }
    s
}

/// Level-p limiting rate functional in closed form, for reversible
/// specifications. Infinite off the convex hull of the level's metastable
/// measures; on it, the weights pay an internal Dirichlet form within every
/// strongly connected component of the reduced-rate graph (with respect to
/// the component's stationary measure) plus the full reduced rate for every
/// component-leaving edge.
pub fn ip_closed(exp: &RateExpansion, p: usize, mu: &[f64]) -> Result<Evaluation> {
    if !exp.reversible {
        return Err(Error::Unsupported(
            "closed form requires detailed balance; use ip_variational".into(),
        ));
    }
    assert!(p >= 1 && p <= exp.tree.q, "level {p} out of range");
    validate_measure(mu, exp.limit().num_states)?;
    let Some(dec) = decompose(&exp.tree, p, mu, DEFAULT_DECOMPOSE_TOL) else {
        return Ok(Evaluation { value: ExtReal::Infinite, uncertainty: None });
    };
    let level = exp.tree.level(p);
    let w = &dec.weights;
    let nw = level.wells.len();
    let succ = |j: usize| -> Vec<usize> {
        (0..nw).filter(|&k| k != j && level.rate_positive[j][k]).collect()
    };
    let comps = graph::sccs(nw, &succ);
    let comp_of = graph::component_of(nw, &comps);

    let mut total = 0.0;
    for comp in &comps {
        if comp.len() >= 2 {
            let m = class_stationary(&level.reduced_rates, comp)?;
            let g: Vec<f64> = comp.iter().zip(&m).map(|(&j, &mj)| (w[j] / mj).sqrt()).collect();
            for (a, &j) in comp.iter().enumerate() {
                for (b, &k) in comp.iter().enumerate() {
                    if j != k && level.rate_positive[j][k] {
                        let d = g[b] - g[a];
                        total += 0.5 * m[a] * level.reduced_rates[j][k] * d * d;
                    }
                }
            }
        }
        for &j in comp {
            for k in 0..nw {
                if level.rate_positive[j][k] && comp_of[k] != comp_of[j] {
                    total += w[j] * level.reduced_rates[j][k];
                }
            }
        }
    }
    Ok(Evaluation {
        value: ExtReal::Finite(total),
        uncertainty: uncertainty_band(total, level_spread(level)),
    })
}

/// Level-p limiting rate functional in variational form,
/// −inf_{𝕙>0} Σ_j ω_j (𝕃^(p)𝕙)(j)/𝕙(j) on the reduced chain; infinite when
/// the measure does not decompose.
pub fn ip_variational(exp: &RateExpansion, p: usize, mu: &[f64]) -> Result<Evaluation> {
    assert!(p >= 1 && p <= exp.tree.q, "level {p} out of range");
    validate_measure(mu, exp.limit().num_states)?;
    let Some(dec) = decompose(&exp.tree, p, mu, DEFAULT_DECOMPOSE_TOL) else {
        return Ok(Evaluation { value: ExtReal::Infinite, uncertainty: None });
    };
    let level = exp.tree.level(p);
    let nw = level.wells.len();
    let prec = LIMIT_PRECISION;
    let mut rates = Mat::zeros(prec, nw, nw);
    for j in 0..nw {
        for k in 0..nw {
            if j != k && level.rate_positive[j][k] {
                *rates.at_mut(j, k) = Float::with_val(prec, level.reduced_rates[j][k]);
            }
        }
    }
    let weights: Vec<Float> =
        dec.weights.iter().map(|&v| Float::with_val(prec, v)).collect();
    let value = dv_sup(&rates, &weights)?.to_f64();
    Ok(Evaluation {
        value: ExtReal::Finite(value),
        uncertainty: uncertainty_band(value, level_spread(level)),
    })
}

/// The measure sequence attaining the limit: μ_n = α_n h_n² π_n, where h_n
/// is the harmonic extension of √(ω_j/π_n(𝒱_j)) off the level's wells and
/// α_n the normalizing constant (→ 1 as n grows).
pub fn recovery_sequence(
    tree: &MetastableTree,
    p: usize,
    mu: &[f64],
    chain: &FiniteChain,
) -> Result<Vec<f64>> {
    let Some(dec) = decompose(tree, p, mu, DEFAULT_DECOMPOSE_TOL) else {
        return Err(Error::Domain(
            "measure is not a convex combination of the level's metastable measures".into(),
        ));
    };
    let level = tree.level(p);
    let prec = chain.precision();
    let pi = chain.stationary()?;

    let mut v0 = Vec::new();
    let mut g = Vec::new();
    for (j, well) in level.wells.iter().enumerate() {
        let mut mass = Float::with_val(prec, 0);
        for &x in well {
            mass += &pi[x];
        }
        let boundary = Float::with_val(prec, Float::with_val(prec, dec.weights[j]) / mass).sqrt();
        for &x in well {
            v0.push(x);
            g.push(boundary.clone());
        }
    }
    let h = chain.poisson_solve(&v0, &g)?;

    let n = chain.num_states();
    let mut raw: Vec<Float> = (0..n)
        .map(|x| {
            let h2 = Float::with_val(prec, &h[x] * &h[x]);
            Float::with_val(prec, h2 * &pi[x])
        })
        .collect();
    let mut total = Float::with_val(prec, 0);
    for v in &raw {
        total += v;
    }
    if !(total > 0) {
        return Err(Error::Domain("recovery measure has no mass".into()));
    }
    for v in raw.iter_mut() {
        *v /= &total;
    }
    Ok(raw.iter().map(|v| v.to_f64()).collect())
}

/// One row of a convergence sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub n: f64,
    /// Finite-n rate function at the swept measure.
    pub rate: f64,
    /// θ^(p)_n-scaled rate (equal to `rate` at level zero).
    pub scaled_rate: f64,
    /// The limiting functional the scaled rates converge to.
    pub target: f64,
    pub abs_err: f64,
}

/// Sweeps the scaled finite-n rate function against its limit: at level zero
/// the measure itself is held fixed; at level p ≥ 1 each n evaluates the
/// recovery sequence. The target must be finite, i.e. the measure must lie
/// in the functional's domain.
pub fn gamma_sweep(
    exp: &RateExpansion,
    p: usize,
    mu: &[f64],
    n_list: &[f64],
) -> Result<Vec<SweepRow>> {
    assert!(p <= exp.tree.q, "level {p} out of range");
    let target = if p == 0 {
        if exp.reversible {
            i0_closed(exp, mu)?
        } else {
            i0_variational(exp, mu)?
        }
    } else {
        let eval =
            if exp.reversible { ip_closed(exp, p, mu)? } else { ip_variational(exp, p, mu)? };
        match eval.value {
            ExtReal::Finite(v) => v,
            ExtReal::Infinite => {
                return Err(Error::Domain(
                    "the limiting functional is infinite at this measure; \
                     sweep a decomposable measure"
                        .into(),
                ))
            }
        }
    };

    let prec = exp.tree.options.precision_bits;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let chain = FiniteChain::instantiate(&exp.tree.spec, n, prec)?;
        let mu_n = if p == 0 {
            mu.to_vec()
        } else {
            recovery_sequence(&exp.tree, p, mu, &chain)?
        };
        let floats: Vec<Float> = mu_n.iter().map(|&v| Float::with_val(prec, v)).collect();
        let rate = if exp.reversible {
            chain.dv_rate_reversible(&floats)?
        } else {
            chain.dv_rate_variational(&floats)?
        }
        .to_f64();
        let theta = if p == 0 {
            1.0
        } else {
            exp.tree
                .theta_at(p, n, prec)?
                .expect("levels up to q carry finite scales")
                .to_f64()
        };
        let scaled_rate = theta * rate;
        rows.push(SweepRow { n, rate, scaled_rate, target, abs_err: (scaled_rate - target).abs() });
    }
    Ok(rows)
}

/// Renders sweep rows as CSV with the header
/// `n,I_n,theta_I_n,target,abs_err`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("n,I_n,theta_I_n,target,abs_err\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.n, row.rate, row.scaled_rate, row.target, row.abs_err
        ));
    }
    out
}
