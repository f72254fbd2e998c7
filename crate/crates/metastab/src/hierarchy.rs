//! The metastable hierarchy of a rate family: the limiting chain and its
//! closed classes (the level-one wells), the tower of time scales
//! θ^(1)_n ≺ θ^(2)_n ≺ …, the reduced chains describing well-to-well jumps
//! at each scale, the metastable measures the chain presents inside each
//! well, and the absorption matrices that say where the dynamics settles
//! when started from an arbitrary state.
//!
//! Construction runs by induction on the level. The scale of level p is
//! read off the total escape rate Σ_i Cap_n(𝒱_i, 𝒱̆_i)/π_n(𝒱_i), whose
//! cost the asymptotic layer certifies exactly for reversible inputs; the
//! limiting reduced rates are extracted from exact finite-n mean rates at
//! two probe parameter values. Quantities that are rational in the limit —
//! the level-zero absorption matrix and the within-well stationary measures
//! — are computed in exact rational arithmetic.

use std::collections::BTreeMap;

use rug::{Float, Rational};

use crate::finite_chain::linalg::{self, Mat};
use crate::finite_chain::{uniformized_exp, FiniteChain};
use crate::scale_algebra::{
    capacity_order, detailed_balance_check, semiring_add, stationary_asymptotics_capped,
    AsymScalar, RateSpec, ARBORESCENCE_WORK_CAP,
};
use crate::{graph, Error, Result};

/// The chain of limiting rates lim_n R_n: the surviving (cost-zero) edges
/// with their prefactors, its closed irreducible classes 𝒱_1..𝒱_𝔫, the
/// multi-element transient classes 𝒞_k, and the transient set Δ.
#[derive(Clone, Debug)]
pub struct LimitChain {
    pub num_states: usize,
    pub surviving_edges: Vec<(usize, usize, Rational)>,
    pub closed_classes: Vec<Vec<usize>>,
    pub transient_classes: Vec<Vec<usize>>,
    pub delta: Vec<usize>,
}

/// Condensation of the cost-zero subgraph of `spec`.
pub fn limit_chain(spec: &RateSpec) -> Result<LimitChain> {
    spec.validate()?;
    let v = spec.num_states();
    let mut surviving = Vec::new();
    for (x, y, r) in spec.edges() {
        let cost = r.cost().expect("spec edges are nonzero");
        if cost.cmp0() == std::cmp::Ordering::Equal {
            surviving.push((x, y, r.prefactor().expect("spec edges are nonzero").clone()));
        }
    }
    if surviving.is_empty() {
        return Err(Error::Model(
            "no jump rate survives the limit: every edge has positive cost".into(),
        ));
    }
    let mut adj = vec![Vec::new(); v];
    for &(x, y, _) in &surviving {
        adj[x].push(y);
    }
    let comps = graph::sccs(v, &|x| adj[x].clone());
    let comp_of = graph::component_of(v, &comps);
    let mut closed_classes = Vec::new();
    let mut transient_classes = Vec::new();
    let mut delta = Vec::new();
    for comp in &comps {
        let closed = comp
            .iter()
            .all(|&x| adj[x].iter().all(|&y| comp_of[y] == comp_of[x]));
        if closed {
            closed_classes.push(comp.clone());
        } else {
            delta.extend(comp.iter().copied());
            if comp.len() >= 2 {
                transient_classes.push(comp.clone());
            }
        }
    }
    delta.sort_unstable();
    Ok(LimitChain { num_states: v, surviving_edges: surviving, closed_classes, transient_classes, delta })
}

/// Exact Gaussian elimination over the rationals with multiple right-hand
/// sides (`b[i]` holds every RHS value of equation i).
fn rational_gauss(
    mut a: Vec<Vec<Rational>>,
    mut b: Vec<Vec<Rational>>,
) -> Result<Vec<Vec<Rational>>> {
    use std::cmp::Ordering::Equal;
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| a[r][col].cmp0() != Equal)
            .ok_or_else(|| Error::Model("absorption system is singular".into()))?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            if a[r][col].cmp0() == Equal {
                continue;
            }
            let factor = Rational::from(&a[r][col] / &a[col][col]);
            for c in col..n {
                let sub = Rational::from(&a[col][c] * &factor);
                a[r][c] -= sub;
            }
            for k in 0..b[r].len() {
                let sub = Rational::from(&b[col][k] * &factor);
                b[r][k] -= sub;
            }
        }
    }
    for col in (0..n).rev() {
        for k in 0..b[col].len() {
            let mut acc = b[col][k].clone();
            for c in col + 1..n {
                acc -= Rational::from(&a[col][c] * &b[c][k]);
            }
            b[col][k] = Rational::from(&acc / &a[col][col]);
        }
    }
    Ok(b)
}

/// Absorption probabilities of the limit chain: 𝔞^(0)(x, j) is the chance
/// that, started from x, the limiting dynamics is captured by the closed
/// class 𝒱_j. Exact rational arithmetic; rows on closed classes are unit
/// vectors.
pub fn absorption_a0(limit: &LimitChain) -> Result<Vec<Vec<Rational>>> {
    use std::cmp::Ordering::Equal;
    let v = limit.num_states;
    let ncl = limit.closed_classes.len();
    let mut class_of = vec![None; v];
    for (m, class) in limit.closed_classes.iter().enumerate() {
        for &x in class {
            class_of[x] = Some(m);
        }
    }
    let mut r0 = vec![vec![Rational::new(); v]; v];
    for (x, y, pref) in &limit.surviving_edges {
        r0[*x][*y] = pref.clone();
    }
    let mut out = vec![vec![Rational::new(); ncl]; v];
    for x in 0..v {
        if let Some(m) = class_of[x] {
            out[x][m] = Rational::from(1);
        }
    }
    let u = limit.delta.len();
    if u == 0 {
        return Ok(out);
    }
    let idx_of: BTreeMap<usize, usize> =
        limit.delta.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let mut a = vec![vec![Rational::new(); u]; u];
    let mut b = vec![vec![Rational::new(); ncl]; u];
    for (i, &x) in limit.delta.iter().enumerate() {
        let mut lambda = Rational::new();
        for y in 0..v {
            lambda += &r0[x][y];
        }
        a[i][i] = lambda;
        for y in 0..v {
            if r0[x][y].cmp0() == Equal {
                continue;
            }
            match class_of[y] {
                Some(m) => b[i][m] += &r0[x][y],
                None => {
                    let j = idx_of[&y];
                    a[i][j] -= &r0[x][y];
                }
            }
        }
    }
    let sol = rational_gauss(a, b)?;
    for (i, &x) in limit.delta.iter().enumerate() {
        out[x] = sol[i].clone();
    }
    Ok(out)
}

/// Tolerances for the two-probe limit extraction.
#[derive(Clone, Copy, Debug)]
pub struct ToleranceSet {
    /// A scaled rate whose fitted cost exceeds this is classified as a zero
    /// limit.
    pub cost_fit: f64,
    /// Maximum relative disagreement between the two probe evaluations of a
    /// positive limit before the construction refuses with an ambiguity.
    pub probe_agreement: f64,
}

impl Default for ToleranceSet {
    fn default() -> Self {
        ToleranceSet { cost_fit: 0.05, probe_agreement: 0.10 }
    }
}

/// Parameters of the tree construction.
#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    /// The two probe values n₁ < n₂ at which finite-n quantities are
    /// evaluated exactly.
    pub probes: (f64, f64),
    /// Working precision of the finite-n solves.
    pub precision_bits: u32,
    pub tolerances: ToleranceSet,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            probes: (12.0, 18.0),
            precision_bits: crate::DEFAULT_PRECISION,
            tolerances: ToleranceSet::default(),
        }
    }
}

/// One generation of the hierarchy: the wells 𝒱^(p)_j, the transient rest
/// Δ_p, the time scale θ^(p)_n, the reduced jump rates between wells, the
/// recurrent/transient classification of the reduced chain, the stationary
/// weights of each recurrent class, and the metastable measure carried by
/// each well.
#[derive(Clone, Debug)]
pub struct Level {
    pub p: usize,
    pub wells: Vec<Vec<usize>>,
    pub delta_p: Vec<usize>,
    /// Order of θ^(p)_n: exact cost (reversible inputs), probe-fitted
    /// prefactor. `None` on the root level, whose scale exceeds every
    /// exponential order.
    pub theta_order: Option<AsymScalar>,
    /// r^(p)(i, j) = lim θ^(p)_n · (mean jump rate from 𝒱_i to 𝒱_j).
    pub reduced_rates: Vec<Vec<f64>>,
    pub rate_positive: Vec<Vec<bool>>,
    /// Relative disagreement of the two probe evaluations per positive rate.
    pub rate_spread: Vec<Vec<f64>>,
    /// Whether each well's escape rate matches the level scale; sub-dominant
    /// wells keep all-zero rows.
    pub matched_escape: Vec<bool>,
    pub recurrent_classes: Vec<Vec<usize>>,
    pub transient_indices: Vec<usize>,
    /// Stationary distribution of the reduced chain restricted to each
    /// recurrent class, aligned with `recurrent_classes`.
    pub class_stationaries: Vec<Vec<f64>>,
    /// π^(p)_j as measures on the full state space, supported exactly on
    /// `wells[j]`.
    pub metastable_measures: Vec<Vec<f64>>,
}

/// The full rooted tree: levels p = 1..𝔮+1 plus the absorption matrices
/// 𝔞^(p) for p = 0..𝔮 (rows over states, columns over level-(p+1) wells).
#[derive(Clone, Debug)]
pub struct MetastableTree {
    pub spec: RateSpec,
    pub limit: LimitChain,
    pub levels: Vec<Level>,
    pub q: usize,
    pub absorption: Vec<Vec<Vec<f64>>>,
    pub options: BuildOptions,
    /// True when the spec was non-reversible (or too large for exact order
    /// arithmetic) and every branching decision came from numeric fitting.
    pub numerically_inferred: bool,
}

/// Exact rational stationary measure of the limit chain restricted to one of
/// its strongly connected classes, spread onto the full state space.
pub(crate) fn sharp_measure(limit: &LimitChain, class: &[usize]) -> Result<Vec<f64>> {
    let mut mu = vec![0.0; limit.num_states];
    if class.len() == 1 {
        mu[class[0]] = 1.0;
        return Ok(mu);
    }
    let pos: BTreeMap<usize, usize> = class.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let mut sub = RateSpec::with_num_states(class.len());
    for (x, y, pref) in &limit.surviving_edges {
        if let (Some(&a), Some(&b)) = (pos.get(x), pos.get(y)) {
            sub.add_edge(a, b, AsymScalar::term(pref.clone(), Rational::new()))?;
        }
    }
    let orders = stationary_asymptotics_capped(&sub, 48, ARBORESCENCE_WORK_CAP)?;
    // Every rate has cost zero, so the stationary orders are plain rationals
    // that already sum to one.
    for (i, &x) in class.iter().enumerate() {
        mu[x] = orders[i]
            .prefactor()
            .expect("stationary weights of an irreducible class are positive")
            .to_f64();
    }
    Ok(mu)
}

/// Cap_n(𝒱_i, 𝒱̆_i)/π_n(𝒱_i) for every well, at the chain's parameter value.
fn escape_rates(chain: &FiniteChain, pi: &[Float], wells: &[Vec<usize>]) -> Result<Vec<Float>> {
    let prec = chain.precision();
    let mut out = Vec::with_capacity(wells.len());
    for (i, well) in wells.iter().enumerate() {
        let others: Vec<usize> = wells
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, w)| w.iter().copied())
            .collect();
        let cap = chain.capacity(well, &others)?;
        let mut mass = Float::with_val(prec, 0);
        for &x in well {
            mass += &pi[x];
        }
        out.push(Float::with_val(prec, cap / mass));
    }
    Ok(out)
}

/// Stationary distribution of the reduced chain restricted to one recurrent
/// class (solved at fixed 128-bit precision, which dwarfs the accuracy of the
/// probe-extracted rates).
pub(crate) fn class_stationary(rates: &[Vec<f64>], class: &[usize]) -> Result<Vec<f64>> {
    let k = class.len();
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let prec = 128u32;
    let mut a = Mat::zeros(prec, k, k);
    for (col, &y) in class.iter().enumerate() {
        let lam: f64 = class.iter().map(|&z| rates[y][z]).sum();
        for (row, &x) in class.iter().enumerate() {
            if row == col {
                *a.at_mut(col, col) = Float::with_val(prec, -lam);
            } else {
                *a.at_mut(col, row) = Float::with_val(prec, rates[x][y]);
            }
        }
    }
    for i in 0..k {
        *a.at_mut(k - 1, i) = Float::with_val(prec, 1);
    }
    let mut b = vec![Float::with_val(prec, 0); k];
    b[k - 1] = Float::with_val(prec, 1);
    let sol = linalg::solve_refined(&a, &b)?;
    let total: f64 = sol.iter().map(|w| w.to_f64()).sum();
    let weights: Vec<f64> = sol.iter().map(|w| w.to_f64() / total).collect();
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Conditioning { residual: weights.iter().cloned().fold(0.0, f64::min) });
    }
    Ok(weights)
}

/// Absorption probabilities 𝔄^(p)(j, m) of the reduced chain into its
/// recurrent classes.
pub fn class_absorption(level: &Level) -> Result<Vec<Vec<f64>>> {
    let nw = level.wells.len();
    let ncl = level.recurrent_classes.len();
    if ncl == 0 {
        return Err(Error::Model("reduced chain has no recurrent class".into()));
    }
    let mut out = vec![vec![0.0; ncl]; nw];
    for (m, class) in level.recurrent_classes.iter().enumerate() {
        for &j in class {
            out[j][m] = 1.0;
        }
    }
    let t = &level.transient_indices;
    if t.is_empty() {
        return Ok(out);
    }
    let prec = 128u32;
    let u = t.len();
    let mut a = Mat::zeros(prec, u, u);
    for (i, &j) in t.iter().enumerate() {
        let lam: f64 = level.reduced_rates[j].iter().sum();
        *a.at_mut(i, i) = Float::with_val(prec, lam);
        for (i2, &j2) in t.iter().enumerate() {
            if i2 != i {
                *a.at_mut(i, i2) = Float::with_val(prec, -level.reduced_rates[j][j2]);
            }
        }
    }
    let rhs: Vec<Vec<Float>> = level
        .recurrent_classes
        .iter()
        .map(|class| {
            t.iter()
                .map(|&j| {
                    let s: f64 = class.iter().map(|&k| level.reduced_rates[j][k]).sum();
                    Float::with_val(prec, s)
                })
                .collect()
        })
        .collect();
    let cols = linalg::solve_refined_multi(&a, &rhs)?;
    for (m, col) in cols.iter().enumerate() {
        for (i, &j) in t.iter().enumerate() {
            out[j][m] = col[i].to_f64();
        }
    }
    Ok(out)
}

/// Row-by-row composition 𝔞^(p)(x, m) = Σ_j 𝔞^(p−1)(x, j) 𝔄^(p)(j, m).
pub fn absorption_compose(prev: &[Vec<f64>], classes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let ncols = classes.first().map_or(0, |r| r.len());
    prev.iter()
        .map(|row| {
            (0..ncols)
                .map(|m| row.iter().zip(classes).map(|(w, arow)| w * arow[m]).sum())
                .collect()
        })
        .collect()
}

/// e^(t L^(p)) for the reduced generator of a level, by uniformization.
pub fn reduced_kernel(level: &Level, t: f64) -> Result<Vec<Vec<f64>>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be finite and ≥ 0, got {t}")));
    }
    let k = level.wells.len();
    let rowsum: Vec<f64> = (0..k).map(|i| level.reduced_rates[i].iter().sum()).collect();
    let lmax = rowsum.iter().cloned().fold(0.0, f64::max);
    if lmax <= 0.0 || t == 0.0 {
        return Ok((0..k)
            .map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect())
            .collect());
    }
    let prec = 128u32;
    let mut pm = Mat::zeros(prec, k, k);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                *pm.at_mut(i, j) = Float::with_val(prec, level.reduced_rates[i][j] / lmax);
            }
        }
        *pm.at_mut(i, i) = Float::with_val(prec, 1.0 - rowsum[i] / lmax);
    }
    let kernel = uniformized_exp(&pm, &Float::with_val(prec, lmax), t, prec)?;
    Ok(kernel
        .to_rows()
        .into_iter()
        .map(|row| row.into_iter().map(|v| v.to_f64()).collect())
        .collect())
}

/// Builds the full tree by induction on the level.
pub fn build_tree(spec: &RateSpec, options: &BuildOptions) -> Result<MetastableTree> {
    spec.validate()?;
    let (n1, n2) = options.probes;
    if !n1.is_finite() || !n2.is_finite() || n1 < 0.0 || n2 <= n1 {
        return Err(Error::Domain(format!(
            "probe values must satisfy 0 ≤ n₁ < n₂, got ({n1}, {n2})"
        )));
    }
    let prec = options.precision_bits;
    let tol = options.tolerances;
    let limit = limit_chain(spec)?;
    let a0 = absorption_a0(&limit)?;

    // Exact order arithmetic needs reversibility and a state count the
    // arborescence enumerator can handle; otherwise all branching decisions
    // fall back on two-probe cost fitting, and the tree says so.
    let pi_orders = match stationary_asymptotics_capped(spec, 48, ARBORESCENCE_WORK_CAP) {
        Ok(pi) => Some(pi),
        Err(Error::Capacity(_)) => None,
        Err(e) => return Err(e),
    };
    let exact_orders = match &pi_orders {
        Some(_) => match detailed_balance_check(spec)? {
            None => pi_orders,
            Some(_) => None,
        },
        None => None,
    };
    let numerically_inferred = exact_orders.is_none();

    let chain1 = FiniteChain::instantiate(spec, n1, prec)?;
    let chain2 = FiniteChain::instantiate(spec, n2, prec)?;
    let pi1 = chain1.stationary()?;
    let pi2 = chain2.stationary()?;

    let mut wells = limit.closed_classes.clone();
    let mut delta = limit.delta.clone();
    let mut measures: Vec<Vec<f64>> = limit
        .closed_classes
        .iter()
        .map(|class| sharp_measure(&limit, class))
        .collect::<Result<_>>()?;

    let mut levels: Vec<Level> = Vec::new();
    let mut absorption: Vec<Vec<Vec<f64>>> =
        vec![a0.iter().map(|row| row.iter().map(|r| r.to_f64()).collect()).collect()];

    loop {
        let p = levels.len() + 1;
        let nw = wells.len();
        if nw == 1 {
            levels.push(Level {
                p,
                wells,
                delta_p: delta,
                theta_order: None,
                reduced_rates: vec![vec![0.0]],
                rate_positive: vec![vec![false]],
                rate_spread: vec![vec![0.0]],
                matched_escape: vec![false],
                recurrent_classes: vec![vec![0]],
                transient_indices: Vec::new(),
                class_stationaries: vec![vec![1.0]],
                metastable_measures: measures,
            });
            break;
        }
        if p > spec.num_states() {
            return Err(Error::Model("hierarchy construction failed to terminate".into()));
        }

        let esc1 = escape_rates(&chain1, &pi1, &wells)?;
        let esc2 = escape_rates(&chain2, &pi2, &wells)?;
        let mut inv1 = Float::with_val(prec, 0);
        let mut inv2 = Float::with_val(prec, 0);
        for e in &esc1 {
            inv1 += e;
        }
        for e in &esc2 {
            inv2 += e;
        }

        let (theta_cost, matched_escape) = if let Some(orders) = &exact_orders {
            let mut costs = Vec::with_capacity(nw);
            for (i, well) in wells.iter().enumerate() {
                let others: Vec<usize> = wells
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .flat_map(|(_, w)| w.iter().copied())
                    .collect();
                let cap = capacity_order(spec, orders, well, &others)?;
                let mut mass = AsymScalar::zero();
                for &x in well {
                    mass = semiring_add(&mass, &orders[x]);
                }
                let esc = cap.div(&mass);
                costs.push(esc.cost().expect("escape rates are nonzero").clone());
            }
            let bstar = costs.iter().min().expect("at least two wells").clone();
            let matched: Vec<bool> = costs.iter().map(|c| *c == bstar).collect();
            (bstar, matched)
        } else {
            let span = n2 - n1;
            let fitted: Vec<f64> = (0..nw)
                .map(|i| Float::with_val(prec, &esc1[i] / &esc2[i]).ln().to_f64() / span)
                .collect();
            let bstar = fitted.iter().cloned().fold(f64::INFINITY, f64::min);
            let matched: Vec<bool> = fitted.iter().map(|&b| b - bstar <= tol.cost_fit).collect();
            let bq = Rational::from_f64(bstar).ok_or_else(|| {
                Error::Precision("fitted escape cost is not a finite number".into())
            })?;
            (bq, matched)
        };

        // θ^(p) order: the cost from above, the prefactor fitted at the
        // second (deeper) probe.
        let theta1 = Float::with_val(prec, 1) / &inv1;
        let theta2 = Float::with_val(prec, 1) / &inv2;
        let theta_order = {
            let decay = Float::with_val(prec, Float::with_val(prec, &theta_cost) * -n2).exp();
            let pref = Float::with_val(prec, &theta2 * &decay).to_f64();
            if !pref.is_finite() || pref <= 0.0 {
                return Err(Error::Precision(format!(
                    "level {p} scale prefactor is not representable at the probes"
                )));
            }
            let pref_q = Rational::from_f64(pref)
                .ok_or_else(|| Error::Precision("scale prefactor is not finite".into()))?;
            Some(AsymScalar::term(pref_q, Rational::from(-&theta_cost)))
        };

        // Two-probe extraction of r^(p)(i, j) = lim θ^(p)_n r^(p)_n(i, j).
        let mr1 = chain1.mean_rates(&wells)?;
        let mr2 = chain2.mean_rates(&wells)?;
        let mut reduced_rates = vec![vec![0.0; nw]; nw];
        let mut rate_positive = vec![vec![false; nw]; nw];
        let mut rate_spread = vec![vec![0.0; nw]; nw];
        const TINY: f64 = 1e-280;
        for i in 0..nw {
            for j in 0..nw {
                if i == j {
                    continue;
                }
                let v1 = Float::with_val(prec, &theta1 * &mr1[i][j]).to_f64();
                let v2 = Float::with_val(prec, &theta2 * &mr2[i][j]).to_f64();
                if v1 <= TINY && v2 <= TINY {
                    continue;
                }
                if v1 <= TINY || v2 <= TINY {
                    return Err(Error::Ambiguity(format!(
                        "level {p} scaled rate ({i}, {j}) vanishes at one probe only: \
                         {v1:.6e} at n = {n1}, {v2:.6e} at n = {n2}"
                    )));
                }
                let fitted = (v1 / v2).ln() / (n2 - n1);
                if fitted > tol.cost_fit {
                    continue;
                }
                let sp = (v1 - v2).abs() / v1.max(v2);
                if sp > tol.probe_agreement {
                    return Err(Error::Ambiguity(format!(
                        "level {p} scaled rate ({i}, {j}) disagrees between the probes: \
                         {v1:.6e} at n = {n1} vs {v2:.6e} at n = {n2} \
                         (fitted cost {fitted:.4}); widen the probes or adjust tolerances"
                    )));
                }
                reduced_rates[i][j] = v2;
                rate_positive[i][j] = true;
                rate_spread[i][j] = sp;
            }
        }

        // A well whose escape rate achieves the level scale must jump
        // somewhere at that scale.
        for (i, &m) in matched_escape.iter().enumerate() {
            if m && !rate_positive[i].iter().any(|&b| b) {
                return Err(Error::Capacity(format!(
                    "level {p} escape scale misidentified: well {i} escapes at the \
                     level scale but all of its scaled jump rates vanish"
                )));
            }
        }

        // Recurrent/transient classification of the reduced chain.
        let comps = graph::sccs(nw, &|j| (0..nw).filter(|&k| rate_positive[j][k]).collect());
        let comp_of = graph::component_of(nw, &comps);
        let mut transient_indices = Vec::new();
        let mut entries: Vec<(Vec<usize>, Vec<usize>, Vec<f64>)> = Vec::new();
        for comp in &comps {
            let closed = comp
                .iter()
                .all(|&j| (0..nw).all(|k| !rate_positive[j][k] || comp_of[k] == comp_of[j]));
            if closed {
                let stat = class_stationary(&reduced_rates, comp)?;
                let mut union: Vec<usize> =
                    comp.iter().flat_map(|&j| wells[j].iter().copied()).collect();
                union.sort_unstable();
                entries.push((union, comp.clone(), stat));
            } else {
                transient_indices.extend(comp.iter().copied());
            }
        }
        transient_indices.sort_unstable();
        entries.sort_by(|a, b| a.0[0].cmp(&b.0[0]));

        let mut next_wells = Vec::with_capacity(entries.len());
        let mut recurrent_classes = Vec::with_capacity(entries.len());
        let mut class_stationaries = Vec::with_capacity(entries.len());
        let mut next_measures = Vec::with_capacity(entries.len());
        for (union, class, stat) in entries {
            let mut mu = vec![0.0; limit.num_states];
            for (&j, &w) in class.iter().zip(&stat) {
                for x in 0..limit.num_states {
                    mu[x] += w * measures[j][x];
                }
            }
            next_wells.push(union);
            recurrent_classes.push(class);
            class_stationaries.push(stat);
            next_measures.push(mu);
        }

        let level = Level {
            p,
            wells: wells.clone(),
            delta_p: delta.clone(),
            theta_order,
            reduced_rates,
            rate_positive,
            rate_spread,
            matched_escape,
            recurrent_classes,
            transient_indices,
            class_stationaries,
            metastable_measures: measures,
        };
        let classes = class_absorption(&level)?;
        let composed = absorption_compose(absorption.last().expect("seeded with 𝔞⁰"), &classes);
        absorption.push(composed);
        for &j in &level.transient_indices {
            delta.extend(level.wells[j].iter().copied());
        }
        delta.sort_unstable();
        levels.push(level);
        wells = next_wells;
        measures = next_measures;
    }

    // Strict scale separation between consecutive finite levels.
    for w in levels.windows(2) {
        if let (Some(a), Some(b)) = (&w[0].theta_order, &w[1].theta_order) {
            if b.cost() >= a.cost() {
                return Err(Error::Ambiguity(format!(
                    "time scales of levels {} and {} are not separated",
                    w[0].p, w[1].p
                )));
            }
        }
    }

    let q = levels.len() - 1;
    Ok(MetastableTree {
        spec: spec.clone(),
        limit,
        levels,
        q,
        absorption,
        options: *options,
        numerically_inferred,
    })
}

impl MetastableTree {
    /// The level for generation p (1-based, up to 𝔮+1).
    pub fn level(&self, p: usize) -> &Level {
        assert!(p >= 1 && p <= self.levels.len(), "level {p} out of range");
        &self.levels[p - 1]
    }

    /// Exact value of θ^(p)_n: the reciprocal of Σ_i Cap_n(𝒱_i, 𝒱̆_i)/π_n(𝒱_i)
    /// at the requested parameter value. θ^(0)_n = 1; the root scale is
    /// beyond every exponential order and reported as `None`.
    pub fn theta_at(&self, p: usize, n: f64, precision_bits: u32) -> Result<Option<Float>> {
        if p > self.q + 1 {
            return Err(Error::Domain(format!("level {p} out of range")));
        }
        if p == 0 {
            return Ok(Some(Float::with_val(precision_bits, 1)));
        }
        if p == self.q + 1 {
            return Ok(None);
        }
        let chain = FiniteChain::instantiate(&self.spec, n, precision_bits)?;
        let pi = chain.stationary()?;
        let esc = escape_rates(&chain, &pi, &self.levels[p - 1].wells)?;
        let mut inv = Float::with_val(precision_bits, 0);
        for e in &esc {
            inv += e;
        }
        Ok(Some(Float::with_val(precision_bits, 1) / inv))
    }

    /// Π_{p−1}(x, ·) = Σ_j 𝔞^(p−1)(x, j) π^(p)_j: the limiting distribution
    /// seen from x in the time window between scales p−1 and p.
    pub fn limiting_kernel_between(&self, p: usize, x: usize) -> Result<Vec<f64>> {
        let v = self.limit.num_states;
        if p < 1 || p > self.q + 1 {
            return Err(Error::Domain(format!("level {p} out of range")));
        }
        if x >= v {
            return Err(Error::Domain("state out of range".into()));
        }
        let weights = &self.absorption[p - 1][x];
        let level = &self.levels[p - 1];
        let mut out = vec![0.0; v];
        for (j, w) in weights.iter().enumerate() {
            for y in 0..v {
                out[y] += w * level.metastable_measures[j][y];
            }
        }
        Ok(out)
    }

    /// The limiting kernel at scale p and reduced time t:
    /// Σ_j ω^(p)_t(x, j) π^(p)_j with ω^(p)_t(x, ·) = 𝔞^(p−1)(x, ·) p^(p)_t.
    pub fn limiting_kernel_at(&self, p: usize, t: f64, x: usize) -> Result<Vec<f64>> {
        let v = self.limit.num_states;
        if p < 1 || p > self.q {
            return Err(Error::Domain(format!(
                "level {p} out of range (the reduced dynamics exists for 1..{})",
                self.q
            )));
        }
        if x >= v {
            return Err(Error::Domain("state out of range".into()));
        }
        let level = &self.levels[p - 1];
        let kernel = reduced_kernel(level, t)?;
        let start = &self.absorption[p - 1][x];
        let nw = level.wells.len();
        let mut omega = vec![0.0; nw];
        for (k, w) in start.iter().enumerate() {
            for j in 0..nw {
                omega[j] += w * kernel[k][j];
            }
        }
        let mut out = vec![0.0; v];
        for (j, w) in omega.iter().enumerate() {
            for y in 0..v {
                out[y] += w * level.metastable_measures[j][y];
            }
        }
        Ok(out)
    }

    /// Max-norm distance between the chain's stationary measure conditioned
    /// to 𝒱^(p)_j and the metastable measure π^(p)_j, for convergence sweeps.
    pub fn conditioned_measure_check(
        &self,
        chain: &FiniteChain,
        p: usize,
        j: usize,
    ) -> Result<f64> {
        if chain.num_states() != self.limit.num_states {
            return Err(Error::Domain("chain does not match the tree's spec".into()));
        }
        if p < 1 || p > self.q + 1 {
            return Err(Error::Domain(format!("level {p} out of range")));
        }
        let level = &self.levels[p - 1];
        if j >= level.wells.len() {
            return Err(Error::Domain("well index out of range".into()));
        }
        let pi = chain.stationary()?;
        let prec = chain.precision();
        let mut mass = Float::with_val(prec, 0);
        for &x in &level.wells[j] {
            mass += &pi[x];
        }
        let mut dist = 0.0f64;
        for &x in &level.wells[j] {
            let cond = Float::with_val(prec, &pi[x] / &mass).to_f64();
            dist = dist.max((cond - level.metastable_measures[j][x]).abs());
        }
        Ok(dist)
    }

    /// DOT rendering of the tree: one node per well per generation, one per
    /// non-empty transient set, edges from each node to its parent.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph metastable_tree {\n  rankdir=BT;\n");
        out.push_str("  root [label=\"root\", shape=box];\n");
        let label = |well: &[usize]| -> String {
            let names: Vec<&str> = well.iter().map(|&x| self.spec.name(x)).collect();
            format!("{{{}}}", names.join(", "))
        };
        for level in &self.levels {
            let p = level.p;
            for (j, well) in level.wells.iter().enumerate() {
                out.push_str(&format!("  w{p}_{j} [label=\"{}\"];\n", label(well)));
            }
            if !level.delta_p.is_empty() {
                out.push_str(&format!(
                    "  d{p} [label=\"Δ{p} ({} states)\", shape=diamond];\n",
                    level.delta_p.len()
                ));
            }
        }
        for level in &self.levels {
            let p = level.p;
            if p == self.levels.len() {
                out.push_str(&format!("  w{p}_0 -> root;\n"));
                if !level.delta_p.is_empty() {
                    out.push_str(&format!("  d{p} -> root;\n"));
                }
            } else {
                for (m, class) in level.recurrent_classes.iter().enumerate() {
                    for &j in class {
                        out.push_str(&format!("  w{p}_{j} -> w{}_{m};\n", p + 1));
                    }
                }
                for &j in &level.transient_indices {
                    out.push_str(&format!("  w{p}_{j} -> d{};\n", p + 1));
                }
                if !level.delta_p.is_empty() {
                    out.push_str(&format!("  d{p} -> d{};\n", p + 1));
                }
            }
        }
        out.push_str("}\n");
        out
    }
}
