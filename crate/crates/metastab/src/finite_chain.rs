//! Extended-precision engine for one instantiated chain at a concrete
//! parameter value n.
//!
//! Everything the asymptotic layers claim is verified here: stationary
//! solves, hitting and return probabilities, capacities, trace processes,
//! Poisson problems, Dirichlet forms, transition kernels, the level-two
//! rate function in both its closed reversible form and its variational
//! form, exact-jump simulation, and a hitting-time tail bound. Rates like
//! e^(−3n) drop below double precision long before the asymptotic regime
//! becomes visible, so all linear algebra runs on MPFR floats (256 bits by
//! default) with iterative refinement.

pub(crate) mod linalg;

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rug::Float;

use crate::scale_algebra::RateSpec;
use crate::{Error, Result};
use linalg::Mat;

/// One member of the family, instantiated at a concrete parameter value:
/// dense jump-rate matrix R_n(x,y) with zero diagonal, holding rates
/// λ_n(x) = Σ_y R_n(x,y), and a working precision. Immutable once built;
/// every operation is a pure function of the chain and its arguments.
#[derive(Debug)]
pub struct FiniteChain {
    n: f64,
    prec: u32,
    rates: Mat,
    lambda: Vec<Float>,
    stat: OnceLock<Vec<Float>>,
}

/// An exact-jump trajectory: the visited states with their holding times,
/// covering `[0, horizon]` exactly (the final holding time is clipped).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub events: Vec<(usize, f64)>,
}

impl Trajectory {
    pub fn total_time(&self) -> f64 {
        self.events.iter().map(|&(_, h)| h).sum()
    }

    /// The state occupied at time t (the last state for t past the horizon).
    pub fn state_at(&self, t: f64) -> usize {
        let mut elapsed = 0.0;
        for &(x, h) in &self.events {
            elapsed += h;
            if t < elapsed {
                return x;
            }
        }
        self.events.last().expect("trajectories are non-empty").0
    }

    /// Fraction of the horizon spent in each state.
    pub fn occupation_fractions(&self, num_states: usize) -> Vec<f64> {
        let mut occ = vec![0.0; num_states];
        for &(x, h) in &self.events {
            occ[x] += h;
        }
        let total = self.total_time();
        if total > 0.0 {
            for o in occ.iter_mut() {
                *o /= total;
            }
        }
        occ
    }
}

impl FiniteChain {
    /// Evaluates every rate of `spec` at the given parameter value.
    pub fn instantiate(spec: &RateSpec, n: f64, precision_bits: u32) -> Result<FiniteChain> {
        if !(n >= 0.0) || !n.is_finite() {
            return Err(Error::Domain(format!("parameter n must be finite and ≥ 0, got {n}")));
        }
        if precision_bits < 64 {
            return Err(Error::Domain(format!(
                "precision_bits must be at least 64, got {precision_bits}"
            )));
        }
        spec.validate()?;
        let v = spec.num_states();
        let mut rates = Mat::zeros(precision_bits, v, v);
        for (x, y, r) in spec.edges() {
            let val = r.eval(n, precision_bits);
            if !val.is_finite() || val <= 0 {
                return Err(Error::Precision(format!(
                    "rate on edge ({x}, {y}) left the representable range at n = {n}"
                )));
            }
            *rates.at_mut(x, y) = val;
        }
        FiniteChain::from_rates(n, precision_bits, rates)
    }

    /// Builds a chain from an explicit rate matrix (zero diagonal expected),
    /// revalidating the standing invariants.
    fn from_rates(n: f64, prec: u32, rates: Mat) -> Result<FiniteChain> {
        let v = rates.rows;
        let succ = |x: usize| -> Vec<usize> {
            (0..v).filter(|&y| y != x && *rates.at(x, y) > 0).collect()
        };
        if crate::graph::sccs(v, &succ).len() != 1 {
            return Err(Error::Model(
                "the instantiated chain is not irreducible".into(),
            ));
        }
        let mut lambda = Vec::with_capacity(v);
        for x in 0..v {
            let mut l = Float::with_val(prec, 0);
            for y in 0..v {
                if y != x {
                    l += rates.at(x, y);
                }
            }
            if l == 0 {
                return Err(Error::Model(format!("state {x} has no outgoing rate")));
            }
            lambda.push(l);
        }
        Ok(FiniteChain { n, prec, rates, lambda, stat: OnceLock::new() })
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn precision(&self) -> u32 {
        self.prec
    }

    pub fn num_states(&self) -> usize {
        self.rates.rows
    }

    /// R_n(x,y); zero when x = y or the edge is absent.
    pub fn rate(&self, x: usize, y: usize) -> Float {
        self.rates.at(x, y).clone()
    }

    /// λ_n(x) = Σ_y R_n(x,y).
    pub fn holding_rate(&self, x: usize) -> Float {
        self.lambda[x].clone()
    }

    /// The point mass at x.
    pub fn delta(&self, x: usize) -> Vec<Float> {
        assert!(x < self.num_states(), "state out of range");
        let mut mu = vec![Float::with_val(self.prec, 0); self.num_states()];
        mu[x] = Float::with_val(self.prec, 1);
        mu
    }

    /// The uniform measure on a non-empty subset.
    pub fn uniform_on(&self, states: &[usize]) -> Vec<Float> {
        assert!(!states.is_empty(), "uniform_on needs a non-empty set");
        let mut mu = vec![Float::with_val(self.prec, 0); self.num_states()];
        for &x in states {
            assert!(x < self.num_states(), "state out of range");
            mu[x] = Float::with_val(self.prec, 1) / states.len() as u32;
        }
        mu
    }

    /// The unique stationary distribution, solved at working precision and
    /// cached. The normalization row replaces the (redundant) last balance
    /// equation.
    pub fn stationary(&self) -> Result<Vec<Float>> {
        if let Some(v) = self.stat.get() {
            return Ok(v.clone());
        }
        let computed = self.compute_stationary()?;
        Ok(self.stat.get_or_init(|| computed).clone())
    }

    fn compute_stationary(&self) -> Result<Vec<Float>> {
        let v = self.num_states();
        let prec = self.prec;
        let mut a = Mat::zeros(prec, v, v);
        for col in 0..v {
            // Row `col` of ℒᵀ is the balance equation of state `col`.
            for x in 0..v {
                if x == col {
                    *a.at_mut(col, col) = -self.lambda[col].clone();
                } else {
                    *a.at_mut(col, x) = self.rates.at(x, col).clone();
                }
            }
        }
        for x in 0..v {
            *a.at_mut(v - 1, x) = Float::with_val(prec, 1);
        }
        let mut b = vec![Float::with_val(prec, 0); v];
        b[v - 1] = Float::with_val(prec, 1);
        let pi = linalg::solve_refined(&a, &b)?;
        let mut worst = 0.0f64;
        for p in &pi {
            if *p <= 0 {
                worst = worst.min(p.to_f64());
            }
        }
        if worst < 0.0 || pi.iter().any(|p| *p <= 0) {
            return Err(Error::Conditioning { residual: worst });
        }
        let mut z = Float::with_val(prec, 0);
        for p in &pi {
            z += p;
        }
        Ok(pi.into_iter().map(|p| Float::with_val(prec, p / &z)).collect())
    }

    fn check_subsets(&self, a: &[usize], b: &[usize]) -> Result<()> {
        let v = self.num_states();
        if a.is_empty() || b.is_empty() {
            return Err(Error::Domain("state sets must be non-empty".into()));
        }
        if a.iter().chain(b).any(|&x| x >= v) {
            return Err(Error::Domain("state out of range".into()));
        }
        if a.iter().any(|x| b.contains(x)) {
            return Err(Error::Domain("state sets must be disjoint".into()));
        }
        Ok(())
    }

    /// The full equilibrium-potential vector h(x) = P_x[H_A < H_B]: one on A,
    /// zero on B, harmonic in between.
    fn hitting_vector(&self, a: &[usize], b: &[usize]) -> Result<Vec<Float>> {
        self.check_subsets(a, b)?;
        let v = self.num_states();
        let prec = self.prec;
        let mut h = vec![Float::with_val(prec, 0); v];
        for &x in a {
            h[x] = Float::with_val(prec, 1);
        }
        let boundary: Vec<bool> = {
            let mut m = vec![false; v];
            for &x in a.iter().chain(b) {
                m[x] = true;
            }
            m
        };
        let interior: Vec<usize> = (0..v).filter(|&x| !boundary[x]).collect();
        if interior.is_empty() {
            return Ok(h);
        }
        let u = interior.len();
        let mut m = Mat::zeros(prec, u, u);
        let mut rhs = vec![Float::with_val(prec, 0); u];
        for (i, &x) in interior.iter().enumerate() {
            *m.at_mut(i, i) = self.lambda[x].clone();
            for (j, &y) in interior.iter().enumerate() {
                if i != j {
                    *m.at_mut(i, j) = -self.rates.at(x, y).clone();
                }
            }
            for &y in a {
                rhs[i] += self.rates.at(x, y);
            }
        }
        let sol = linalg::solve_refined(&m, &rhs)?;
        for (i, &x) in interior.iter().enumerate() {
            h[x] = sol[i].clone();
        }
        Ok(h)
    }

    /// P_from[H_A < H_B], with the boundary conventions h = 1 on A, 0 on B.
    pub fn hitting_probability(&self, from: usize, a: &[usize], b: &[usize]) -> Result<Float> {
        if from >= self.num_states() {
            return Err(Error::Domain("state out of range".into()));
        }
        Ok(self.hitting_vector(a, b)?[from].clone())
    }

    /// Probability that the chain started at x ∈ A reaches B strictly before
    /// returning to A, decomposed over the first jump.
    pub fn return_probability(&self, x: usize, a: &[usize], b: &[usize]) -> Result<Float> {
        if !a.contains(&x) {
            return Err(Error::Domain("return_probability needs x ∈ A".into()));
        }
        let h = self.hitting_vector(a, b)?;
        let prec = self.prec;
        let mut acc = Float::with_val(prec, 0);
        for y in 0..self.num_states() {
            if y != x {
                let miss = Float::with_val(prec, 1 - &h[y]);
                acc += Float::with_val(prec, self.rates.at(x, y) * &miss);
            }
        }
        Ok(acc / &self.lambda[x])
    }

    /// Cap_n(A,B) = Σ_{x∈A} π_n(x) λ_n(x) P_x[H_B < H⁺_A]. The formula is
    /// the general (non-reversible) definition.
    pub fn capacity(&self, a: &[usize], b: &[usize]) -> Result<Float> {
        let h = self.hitting_vector(a, b)?;
        let pi = self.stationary()?;
        let prec = self.prec;
        let mut cap = Float::with_val(prec, 0);
        for &x in a {
            let mut flow = Float::with_val(prec, 0);
            for y in 0..self.num_states() {
                if y != x {
                    let miss = Float::with_val(prec, 1 - &h[y]);
                    flow += Float::with_val(prec, self.rates.at(x, y) * &miss);
                }
            }
            cap += Float::with_val(prec, &pi[x] * &flow);
        }
        Ok(cap)
    }

    /// Jump rates of the trace process on W (sorted ascending): the clock
    /// only runs inside W, and a jump lands on the next W-state the original
    /// chain visits. Returns the traced chain on `{0, …, |W|−1}` in the order
    /// of the sorted W.
    pub fn trace_rates(&self, w: &[usize]) -> Result<FiniteChain> {
        let v = self.num_states();
        let mut w: Vec<usize> = w.to_vec();
        w.sort_unstable();
        w.dedup();
        if w.iter().any(|&x| x >= v) {
            return Err(Error::Domain("state out of range".into()));
        }
        if w.len() < 2 {
            return Err(Error::Domain("trace_rates needs at least two states".into()));
        }
        let prec = self.prec;
        let k = w.len();
        if k == v {
            return FiniteChain::from_rates(self.n, prec, self.rates.clone());
        }
        let in_w: Vec<bool> = {
            let mut m = vec![false; v];
            for &x in &w {
                m[x] = true;
            }
            m
        };
        let outside: Vec<usize> = (0..v).filter(|&x| !in_w[x]).collect();
        let u = outside.len();
        // Ψ(o, y) = P_o[the chain enters W at y]: (−ℒ_OO)Ψ·e_y = R_{O,y}.
        let mut m = Mat::zeros(prec, u, u);
        for (i, &x) in outside.iter().enumerate() {
            *m.at_mut(i, i) = self.lambda[x].clone();
            for (j, &y) in outside.iter().enumerate() {
                if i != j {
                    *m.at_mut(i, j) = -self.rates.at(x, y).clone();
                }
            }
        }
        let rhs: Vec<Vec<Float>> = w
            .iter()
            .map(|&y| outside.iter().map(|&o| self.rates.at(o, y).clone()).collect())
            .collect();
        let psi_cols = linalg::solve_refined_multi(&m, &rhs)?;
        let mut tr = Mat::zeros(prec, k, k);
        for (xi, &x) in w.iter().enumerate() {
            for (yi, &y) in w.iter().enumerate() {
                if xi == yi {
                    continue;
                }
                let mut r = self.rates.at(x, y).clone();
                for (oi, &o) in outside.iter().enumerate() {
                    r += Float::with_val(prec, self.rates.at(x, o) * &psi_cols[yi][oi]);
                }
                *tr.at_mut(xi, yi) = r;
            }
        }
        FiniteChain::from_rates(self.n, prec, tr)
    }

    /// Mean jump rates between the blocks of a partition: the π_n-weighted
    /// average of the trace rates on the union of the blocks, normalized by
    /// the block masses.
    pub fn mean_rates(&self, partition: &[Vec<usize>]) -> Result<Vec<Vec<Float>>> {
        let v = self.num_states();
        let prec = self.prec;
        let mut seen = vec![false; v];
        for block in partition {
            if block.is_empty() {
                return Err(Error::Domain("empty partition block".into()));
            }
            for &x in block {
                if x >= v {
                    return Err(Error::Domain("state out of range".into()));
                }
                if seen[x] {
                    return Err(Error::Domain("partition blocks overlap".into()));
                }
                seen[x] = true;
            }
        }
        let mut w: Vec<usize> = partition.iter().flatten().copied().collect();
        w.sort_unstable();
        let pos: std::collections::BTreeMap<usize, usize> =
            w.iter().enumerate().map(|(i, &x)| (x, i)).collect();
        let tr = self.trace_rates(&w)?;
        let pi = self.stationary()?;
        let nb = partition.len();
        let mut out = vec![vec![Float::with_val(prec, 0); nb]; nb];
        for (i, bi) in partition.iter().enumerate() {
            let mut mass = Float::with_val(prec, 0);
            for &x in bi {
                mass += &pi[x];
            }
            for (j, bj) in partition.iter().enumerate() {
                if i == j {
                    continue;
                }
                let mut acc = Float::with_val(prec, 0);
                for &x in bi {
                    let mut row = Float::with_val(prec, 0);
                    for &y in bj {
                        row += tr.rates.at(pos[&x], pos[&y]);
                    }
                    acc += Float::with_val(prec, &pi[x] * &row);
                }
                out[i][j] = acc / &mass;
            }
        }
        Ok(out)
    }

    /// Harmonic extension: f = g on V0, ℒf = 0 elsewhere; equivalently
    /// f(x) = E_x[g(X_{H_V0})].
    pub fn poisson_solve(&self, v0: &[usize], g: &[Float]) -> Result<Vec<Float>> {
        let v = self.num_states();
        let prec = self.prec;
        if v0.is_empty() {
            return Err(Error::Domain("V0 must be non-empty".into()));
        }
        if g.len() != v0.len() {
            return Err(Error::Domain("boundary data length mismatch".into()));
        }
        let mut in_v0 = vec![false; v];
        for &x in v0 {
            if x >= v {
                return Err(Error::Domain("state out of range".into()));
            }
            if in_v0[x] {
                return Err(Error::Domain("duplicate state in V0".into()));
            }
            in_v0[x] = true;
        }
        let mut f = vec![Float::with_val(prec, 0); v];
        for (&x, gx) in v0.iter().zip(g) {
            f[x] = gx.clone();
        }
        let interior: Vec<usize> = (0..v).filter(|&x| !in_v0[x]).collect();
        if interior.is_empty() {
            return Ok(f);
        }
        let u = interior.len();
        let mut m = Mat::zeros(prec, u, u);
        let mut rhs = vec![Float::with_val(prec, 0); u];
        for (i, &x) in interior.iter().enumerate() {
            *m.at_mut(i, i) = self.lambda[x].clone();
            for (j, &y) in interior.iter().enumerate() {
                if i != j {
                    *m.at_mut(i, j) = -self.rates.at(x, y).clone();
                }
            }
            for (&y, gy) in v0.iter().zip(g) {
                rhs[i] += Float::with_val(prec, self.rates.at(x, y) * gy);
            }
        }
        let sol = linalg::solve_refined(&m, &rhs)?;
        for (i, &x) in interior.iter().enumerate() {
            f[x] = sol[i].clone();
        }
        Ok(f)
    }

    /// ⟨f, (−ℒ_n)f⟩_{π_n}; for reversible chains this is the Dirichlet form
    /// (1/2)Σ π(x)R(x,y)(f(y) − f(x))².
    pub fn dirichlet_form(&self, f: &[Float]) -> Result<Float> {
        let v = self.num_states();
        if f.len() != v {
            return Err(Error::Domain("function length mismatch".into()));
        }
        let pi = self.stationary()?;
        let prec = self.prec;
        let mut acc = Float::with_val(prec, 0);
        for x in 0..v {
            let mut neg_lf = Float::with_val(prec, 0);
            for y in 0..v {
                if y != x {
                    let diff = Float::with_val(prec, &f[x] - &f[y]);
                    neg_lf += Float::with_val(prec, self.rates.at(x, y) * &diff);
                }
            }
            let w = Float::with_val(prec, &pi[x] * &f[x]);
            acc += Float::with_val(prec, w * neg_lf);
        }
        Ok(acc)
    }

    /// The transition matrix e^(tℒ) by uniformization: P = I + ℒ/Λ with
    /// Λ = max λ, Poisson-weighted power series on a time slice small enough
    /// that the series is short, then repeated squaring. Truncation is pushed
    /// below 2^(−prec/2) after the squarings.
    pub fn transition_kernel(&self, t: f64) -> Result<Vec<Vec<Float>>> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("time must be finite and ≥ 0, got {t}")));
        }
        let v = self.num_states();
        let prec = self.prec;
        let lambda_max = {
            let mut m = Float::with_val(prec, 0);
            for l in &self.lambda {
                if *l > m {
                    m = l.clone();
                }
            }
            m
        };
        let mut p = Mat::identity(prec, v);
        for x in 0..v {
            for y in 0..v {
                if x != y {
                    *p.at_mut(x, y) = Float::with_val(prec, self.rates.at(x, y) / &lambda_max);
                }
            }
            *p.at_mut(x, x) = Float::with_val(prec, 1)
                - Float::with_val(prec, &self.lambda[x] / &lambda_max);
        }
        Ok(uniformized_exp(&p, &lambda_max, t, prec)?.to_rows())
    }

    fn validated_measure(&self, mu: &[Float]) -> Result<Vec<Float>> {
        let v = self.num_states();
        let prec = self.prec;
        if mu.len() != v {
            return Err(Error::Domain("measure length mismatch".into()));
        }
        let tiny = Float::with_val(prec, 1) >> (prec / 2);
        let mut out = Vec::with_capacity(v);
        let mut sum = Float::with_val(prec, 0);
        for m in mu {
            if *m < 0 {
                if m.clone().abs() > tiny {
                    return Err(Error::Domain("measure has a negative weight".into()));
                }
                out.push(Float::with_val(prec, 0));
            } else {
                out.push(m.clone());
                sum += m;
            }
        }
        let dev = Float::with_val(prec, 1 - &sum).abs().to_f64();
        if dev > 1e-9 {
            return Err(Error::Domain(format!(
                "measure weights sum to 1 ± {dev:e}, expected 1"
            )));
        }
        for m in out.iter_mut() {
            *m /= &sum;
        }
        Ok(out)
    }

    /// Closed-form level-two rate function for reversible chains:
    /// (1/2) Σ π(x)R(x,y) (√(μ(y)/π(y)) − √(μ(x)/π(x)))².
    pub fn dv_rate_reversible(&self, mu: &[Float]) -> Result<Float> {
        let mu = self.validated_measure(mu)?;
        let pi = self.stationary()?;
        let v = self.num_states();
        let prec = self.prec;
        // Detailed-balance verification at working precision.
        let tol = Float::with_val(prec, 1) >> (prec / 2);
        for x in 0..v {
            for y in x + 1..v {
                let lhs = Float::with_val(prec, &pi[x] * self.rates.at(x, y));
                let rhs = Float::with_val(prec, &pi[y] * self.rates.at(y, x));
                let scale = Float::with_val(prec, &lhs + &rhs);
                let dev = Float::with_val(prec, &lhs - &rhs).abs();
                if dev > Float::with_val(prec, &tol * &scale) {
                    return Err(Error::Unsupported(format!(
                        "chain is not reversible (edge ({x}, {y})); \
                         use dv_rate_variational"
                    )));
                }
            }
        }
        let sqrt_f: Vec<Float> = (0..v)
            .map(|x| Float::with_val(prec, &mu[x] / &pi[x]).sqrt())
            .collect();
        let mut acc = Float::with_val(prec, 0);
        for x in 0..v {
            for y in 0..v {
                if y != x {
                    let c = Float::with_val(prec, &pi[x] * self.rates.at(x, y));
                    let d = Float::with_val(prec, &sqrt_f[y] - &sqrt_f[x]);
                    let d2 = Float::with_val(prec, &d * &d);
                    acc += Float::with_val(prec, c * d2);
                }
            }
        }
        Ok(acc / 2u32)
    }

    /// Variational level-two rate function
    /// ℐ_n(μ) = sup_φ −Σ μ(x)R(x,y)(e^(φ(y)−φ(x)) − 1),
    /// valid for non-reversible chains. Where μ vanishes the supremum is only
    /// attained in the limit φ → −∞; those directions are resolved exactly by
    /// decomposing over the strongly connected components of the support
    /// graph, leaving a smooth concave problem per component for damped
    /// Newton iteration.
    pub fn dv_rate_variational(&self, mu: &[Float]) -> Result<Float> {
        let mu = self.validated_measure(mu)?;
        dv_sup(&self.rates, &mu)
    }

    /// The raw variational objective −Σ μ(x)R(x,y)(e^(φ(y)−φ(x)) − 1) at an
    /// explicit finite test potential φ. Always ≤ the supremum; invariant
    /// under constant shifts of φ.
    pub fn dv_objective(&self, mu: &[Float], phi: &[Float]) -> Float {
        let v = self.num_states();
        assert_eq!(mu.len(), v, "measure length mismatch");
        assert_eq!(phi.len(), v, "potential length mismatch");
        let prec = self.prec;
        let mut acc = Float::with_val(prec, 0);
        for x in 0..v {
            if mu[x] == 0 {
                continue;
            }
            for y in 0..v {
                if y == x || *self.rates.at(x, y) == 0 {
                    continue;
                }
                let e = Float::with_val(prec, &phi[y] - &phi[x]).exp();
                let term = Float::with_val(prec, e - 1u32);
                let w = Float::with_val(prec, &mu[x] * self.rates.at(x, y));
                acc -= Float::with_val(prec, w * term);
            }
        }
        acc
    }

    /// Exact-jump (Gillespie) simulation in double precision, deterministic
    /// in the seed. The trajectory covers `[0, horizon]` exactly.
    pub fn simulate(&self, start: usize, horizon: f64, seed: u64) -> Trajectory {
        assert!(start < self.num_states(), "state out of range");
        assert!(horizon > 0.0 && horizon.is_finite(), "horizon must be positive");
        let v = self.num_states();
        let rf: Vec<Vec<f64>> =
            (0..v).map(|x| (0..v).map(|y| self.rates.at(x, y).to_f64()).collect()).collect();
        let lam: Vec<f64> = self.lambda.iter().map(|l| l.to_f64()).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut events = Vec::new();
        let mut x = start;
        let mut elapsed = 0.0f64;
        loop {
            let u: f64 = rng.random();
            let hold = -(1.0 - u).ln() / lam[x];
            if !(elapsed + hold < horizon) {
                events.push((x, horizon - elapsed));
                break;
            }
            events.push((x, hold));
            elapsed += hold;
            let mut target = rng.random::<f64>() * lam[x];
            let mut next = x;
            for y in 0..v {
                if y != x && rf[x][y] > 0.0 {
                    next = y;
                    target -= rf[x][y];
                    if target <= 0.0 {
                        break;
                    }
                }
            }
            x = next;
        }
        Trajectory { seed, events }
    }

    /// Checks the hitting-time tail bound: for singleton A = {x},
    /// P_x[H_B ≤ ρ] ≤ e · (Cap({x},B)/π(x)) · ρ; for general A the squared
    /// version P_{π_A}[H_B ≤ ρ]² ≤ e² · (Cap(A,B)/π(A)) · ρ. The left side is
    /// evaluated by exponentiating the sub-generator killed on B, which keeps
    /// the check free of sampling noise.
    pub fn hitting_time_bound_check(&self, a: &[usize], b: &[usize], rho: f64) -> Result<bool> {
        self.check_subsets(a, b)?;
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Domain("rho must be positive and finite".into()));
        }
        let v = self.num_states();
        let prec = self.prec;
        let pi = self.stationary()?;
        let cap = self.capacity(a, b)?;

        let in_b: Vec<bool> = {
            let mut m = vec![false; v];
            for &x in b {
                m[x] = true;
            }
            m
        };
        let alive: Vec<usize> = (0..v).filter(|&x| !in_b[x]).collect();
        let lambda_max = {
            let mut m = Float::with_val(prec, 0);
            for l in &self.lambda {
                if *l > m {
                    m = l.clone();
                }
            }
            m
        };
        // Killed sub-generator: rows/columns off B, diagonal keeps the full
        // holding rate so mass leaks into B.
        let u = alive.len();
        let mut p = Mat::zeros(prec, u, u);
        for (i, &x) in alive.iter().enumerate() {
            for (j, &y) in alive.iter().enumerate() {
                if i != j {
                    *p.at_mut(i, j) = Float::with_val(prec, self.rates.at(x, y) / &lambda_max);
                }
            }
            *p.at_mut(i, i) =
                Float::with_val(prec, 1) - Float::with_val(prec, &self.lambda[x] / &lambda_max);
        }
        let kernel = uniformized_exp(&p, &lambda_max, rho, prec)?;
        let survive = |x: usize| -> Float {
            let i = alive.iter().position(|&z| z == x).expect("x is off B");
            let mut s = Float::with_val(prec, 0);
            for j in 0..u {
                s += kernel.at(i, j);
            }
            s
        };
        let e = Float::with_val(prec, 1).exp();
        if a.len() == 1 {
            let x = a[0];
            let lhs = Float::with_val(prec, 1) - survive(x);
            let ratio = Float::with_val(prec, &cap / &pi[x]);
            let rhs = Float::with_val(prec, &e * &ratio) * rho;
            Ok(lhs <= rhs)
        } else {
            let mut mass = Float::with_val(prec, 0);
            for &x in a {
                mass += &pi[x];
            }
            let mut hit = Float::with_val(prec, 0);
            for &x in a {
                let dead = Float::with_val(prec, 1) - survive(x);
                let w = Float::with_val(prec, &pi[x] / &mass);
                hit += Float::with_val(prec, w * dead);
            }
            let lhs = Float::with_val(prec, &hit * &hit);
            let ratio = Float::with_val(prec, &cap / &mass);
            let e2 = Float::with_val(prec, &e * &e);
            let rhs = Float::with_val(prec, e2 * ratio) * rho;
            Ok(lhs <= rhs)
        }
    }
}

/// e^(tΛ(P − I)) for a non-negative P with row sums ≤ 1: binary time
/// splitting until the slice satisfies τΛ ≤ 32, Poisson-weighted power
/// series with the truncation target tightened by the number of squarings,
/// then repeated squaring.
pub(crate) fn uniformized_exp(p: &Mat, lambda_max: &Float, t: f64, prec: u32) -> Result<Mat> {
    let v = p.rows;
    if t == 0.0 {
        return Ok(Mat::identity(prec, v));
    }
    let mut slice = Float::with_val(prec, lambda_max * t);
    let mut squarings: u32 = 0;
    while slice > 32 {
        slice /= 2;
        squarings += 1;
    }
    if squarings > prec / 2 - 20 {
        return Err(Error::Precision(format!(
            "time horizon needs {squarings} squarings, beyond the budget of \
             precision_bits = {prec}; raise the precision or split the interval"
        )));
    }
    let tail_bits = prec / 2 + squarings + 10;
    let threshold = Float::with_val(prec, 1) >> tail_bits;
    let mut weight = Float::with_val(prec, -slice.clone()).exp();
    let mut cum = weight.clone();
    let mut term = Mat::identity(prec, v);
    let mut acc = term.scaled(&weight);
    let slice_f = slice.to_f64();
    let mut k: u64 = 1;
    loop {
        term = term.mul(p);
        weight *= &slice;
        weight /= Float::with_val(prec, k);
        acc.add_scaled(&term, &weight);
        cum += &weight;
        let tail = Float::with_val(prec, 1 - &cum);
        if k as f64 >= slice_f && tail < threshold {
            break;
        }
        k += 1;
        if k > 100_000 {
            return Err(Error::Precision(
                "uniformization series failed to converge".into(),
            ));
        }
    }
    for _ in 0..squarings {
        acc = acc.mul(&acc);
    }
    Ok(acc)
}

/// sup_φ −Σ w(x)R(x,y)(e^(φ(y)−φ(x)) − 1) for a non-negative weight vector,
/// shared by the finite-n rate function and the limit-chain functionals.
///
/// The supremum decomposes exactly: edges leaving the support of w, and edges
/// crossing between strongly connected components of the support graph, are
/// driven to their limit value w(x)R(x,y) by sending the downstream potential
/// to −∞; each component itself is a smooth strictly concave problem after
/// pinning one gauge coordinate, solved by damped Newton iteration to
/// gradient norm ≤ 10⁻¹²·(1 + |value|).
pub(crate) fn dv_sup(rates: &Mat, weights: &[Float]) -> Result<Float> {
    let v = rates.rows;
    let prec = rates.prec;
    assert_eq!(weights.len(), v, "weight length mismatch");
    let supported: Vec<bool> = weights.iter().map(|w| *w > 0).collect();
    let succ = |x: usize| -> Vec<usize> {
        if !supported[x] {
            return Vec::new();
        }
        (0..v)
            .filter(|&y| y != x && supported[y] && *rates.at(x, y) > 0)
            .collect()
    };
    let comps = crate::graph::sccs(v, &succ);
    let comp_of = crate::graph::component_of(v, &comps);

    let mut total = Float::with_val(prec, 0);
    // Leak edges: out of the support, or across components.
    for x in 0..v {
        if !supported[x] {
            continue;
        }
        for y in 0..v {
            if y == x || *rates.at(x, y) == 0 {
                continue;
            }
            if !supported[y] || comp_of[x] != comp_of[y] {
                total += Float::with_val(prec, &weights[x] * rates.at(x, y));
            }
        }
    }
    // Internal suprema per multi-state component.
    for comp in &comps {
        if comp.len() < 2 || !supported[comp[0]] {
            continue;
        }
        total += newton_component(rates, weights, comp)?;
    }
    Ok(total)
}

/// Damped Newton ascent of the concave objective restricted to one strongly
/// connected component of the support graph, with φ pinned at the
/// component's first state.
fn newton_component(rates: &Mat, weights: &[Float], comp: &[usize]) -> Result<Float> {
    let prec = rates.prec;
    let q = comp.len();
    let edges: Vec<(usize, usize, Float)> = comp
        .iter()
        .enumerate()
        .flat_map(|(i, &x)| {
            comp.iter().enumerate().filter_map(move |(j, &y)| {
                if i != j && *rates.at(x, y) > 0 {
                    Some((i, j, Float::with_val(prec, &weights[x] * rates.at(x, y))))
                } else {
                    None
                }
            })
        })
        .collect();

    let objective = |phi: &[Float]| -> Float {
        let mut g = Float::with_val(prec, 0);
        for (i, j, w) in &edges {
            let e = Float::with_val(prec, &phi[*j] - &phi[*i]).exp();
            let term = Float::with_val(prec, e - 1u32);
            g -= Float::with_val(prec, w * &term);
        }
        g
    };

    let mut phi = vec![Float::with_val(prec, 0); q];
    let mut g = objective(&phi);
    for _iter in 0..500 {
        // Edge flows w_e·e^(Δφ), gradient, and convergence check.
        let flows: Vec<Float> = edges
            .iter()
            .map(|(i, j, w)| {
                let e = Float::with_val(prec, &phi[*j] - &phi[*i]).exp();
                Float::with_val(prec, w * &e)
            })
            .collect();
        let mut grad = vec![Float::with_val(prec, 0); q];
        for ((i, j, _), flow) in edges.iter().zip(&flows) {
            grad[*i] += flow;
            grad[*j] -= flow;
        }
        let gnorm = {
            let mut m = Float::with_val(prec, 0);
            for gr in &grad {
                let a = gr.clone().abs();
                if a > m {
                    m = a;
                }
            }
            m
        };
        let tol = Float::with_val(prec, g.clone().abs() + 1u32) * 1e-12f64;
        if gnorm <= tol {
            return Ok(g);
        }
        // Negated Hessian on the free coordinates 1..q: the weighted graph
        // Laplacian, positive definite once the gauge is pinned.
        let mut h = Mat::zeros(prec, q - 1, q - 1);
        for ((i, j, _), flow) in edges.iter().zip(&flows) {
            if *i > 0 {
                *h.at_mut(i - 1, i - 1) += flow;
            }
            if *j > 0 {
                *h.at_mut(j - 1, j - 1) += flow;
            }
            if *i > 0 && *j > 0 {
                *h.at_mut(i - 1, j - 1) -= flow;
                *h.at_mut(j - 1, i - 1) -= flow;
            }
        }
        let rhs: Vec<Float> = grad[1..].to_vec();
        let lu = linalg::lu_factor(&h).map_err(|_| {
            Error::Convergence("Newton system for the rate functional is singular".into())
        })?;
        let step = lu.solve(&rhs);
        // Monotone backtracking: halve until the ascent really ascends.
        let mut scale = Float::with_val(prec, 1);
        let mut accepted = false;
        for _ in 0..80 {
            let mut trial = phi.clone();
            for (t, s) in trial[1..].iter_mut().zip(&step) {
                *t += Float::with_val(prec, s * &scale);
            }
            let gt = objective(&trial);
            if gt >= g {
                phi = trial;
                g = gt;
                accepted = true;
                break;
            }
            scale /= 2u32;
        }
        if !accepted {
            // No ascent direction left at this precision: we are at the
            // supremum up to rounding.
            return Ok(g);
        }
    }
    Err(Error::Convergence(format!(
        "rate-functional Newton iteration did not converge within 500 steps \
         (component size {q}, last value {g})"
    )))
}
