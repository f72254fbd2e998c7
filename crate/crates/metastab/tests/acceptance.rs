//! Acceptance suite: nine end-to-end checks that tie the whole toolkit
//! together on the bundled landscape example and on randomized reversible
//! models. Each test covers one headline guarantee — hierarchy structure,
//! kernel convergence, conditioned measures, the potential-theory identity
//! suite, rate-function cross-checks, zero-level-set structure, recovery
//! sweeps, the capacity sandwich, and a Gillespie simulation cross-check —
//! and prints a single summary line with the measured numbers.

use std::sync::OnceLock;
use std::time::Instant;

use metastab::finite_chain::FiniteChain;
use metastab::gamma_expansion::{
    decompose, gamma_sweep, i0_closed, i0_variational, ip_closed, ip_variational, RateExpansion,
    DEFAULT_DECOMPOSE_TOL,
};
use metastab::hierarchy::{build_tree, BuildOptions, MetastableTree};
use metastab::models;
use metastab::rug::Float;
use metastab::scale_algebra::{capacity_order, stationary_asymptotics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const P: u32 = 256;

/// Well positions of the landscape example, by state index.
const WELLS: [usize; 9] = [1, 3, 6, 11, 14, 16, 21, 23, 29];

fn fig1_tree() -> &'static MetastableTree {
    static TREE: OnceLock<MetastableTree> = OnceLock::new();
    TREE.get_or_init(|| {
        build_tree(&models::fig1_spec(), &BuildOptions::default()).expect("landscape tree builds")
    })
}

fn fig1_exp() -> &'static RateExpansion {
    static EXP: OnceLock<RateExpansion> = OnceLock::new();
    EXP.get_or_init(|| RateExpansion::new(fig1_tree().clone()).expect("expansion builds"))
}

fn f(v: f64) -> Float {
    Float::with_val(P, v)
}

/// Relative deviation between two extended-precision values.
fn rel_f(a: &Float, b: &Float) -> f64 {
    let scale = a.clone().abs().max(&b.clone().abs());
    if scale == 0 {
        return 0.0;
    }
    (Float::with_val(P, a - b).abs() / scale).to_f64()
}

fn rel_64(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        return 0.0;
    }
    (a - b).abs() / scale
}

/// A strictly positive random probability vector, bounded away from zero.
fn floored_simplex(rng: &mut ChaCha12Rng, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= s;
    }
    w
}

fn delta30(x: usize) -> Vec<f64> {
    let mut mu = vec![0.0; 30];
    mu[x] = 1.0;
    mu
}

fn mix30(parts: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = vec![0.0; 30];
    for (w, m) in parts {
        for x in 0..30 {
            out[x] += w * m[x];
        }
    }
    out
}

/// k distinct states drawn uniformly, returned in ascending order.
fn pick_distinct(rng: &mut ChaCha12Rng, v: usize, k: usize) -> Vec<usize> {
    assert!(k <= v);
    let mut xs: Vec<usize> = (0..v).collect();
    for i in 0..k {
        let j = rng.random_range(i..v);
        xs.swap(i, j);
    }
    let mut out = xs[..k].to_vec();
    out.sort_unstable();
    out
}

/// Random well-weight combination of a level's limit measures.
fn level_combo(rng: &mut ChaCha12Rng, exp: &RateExpansion, p: usize) -> Vec<f64> {
    let level = exp.tree.level(p);
    let w = floored_simplex(rng, level.wells.len());
    let mut mu = vec![0.0; 30];
    for (j, &wj) in w.iter().enumerate() {
        for x in 0..30 {
            mu[x] += wj * level.metastable_measures[j][x];
        }
    }
    mu
}

/// Like [`level_combo`] but, at the top interior level where the rate
/// function has an interior zero (the balanced two-well split), resampled
/// until the weights sit clearly away from that zero.
fn level_combo_clear(rng: &mut ChaCha12Rng, exp: &RateExpansion, p: usize) -> Vec<f64> {
    if p != 3 {
        return level_combo(rng, exp, p);
    }
    let level = exp.tree.level(3);
    let r01 = level.reduced_rates[0][1];
    let r10 = level.reduced_rates[1][0];
    let balance = r10 / (r01 + r10);
    loop {
        let w = floored_simplex(rng, 2);
        if (w[0] - balance).abs() < 0.01 {
            continue;
        }
        let mut mu = vec![0.0; 30];
        for (j, &wj) in w.iter().enumerate() {
            for x in 0..30 {
                mu[x] += wj * level.metastable_measures[j][x];
            }
        }
        return mu;
    }
}

/// Geometric-mean observation window between consecutive scales; above the
/// top scale the window opens another e^{n/2} beyond θ^(q).
fn mixing_window(tree: &MetastableTree, p: usize, n: f64) -> f64 {
    let th = |q: usize| -> f64 {
        tree.theta_at(q, n, P)
            .expect("level in range")
            .expect("scale defined below the top")
            .to_f64()
    };
    if p <= tree.q {
        (th(p - 1) * th(p)).sqrt()
    } else {
        th(tree.q) * (0.5 * n).exp()
    }
}

// ---------------------------------------------------------------- criteria

#[test]
fn a1_hierarchy_structure() {
    let t0 = Instant::now();
    let tree = build_tree(&models::fig1_spec(), &BuildOptions::default()).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();

    assert_eq!(tree.q, 3, "three non-trivial scales");
    assert_eq!(tree.levels.len(), 4, "four levels including the top");

    let l1 = tree.level(1);
    let want1: Vec<Vec<usize>> = WELLS.iter().map(|&x| vec![x]).collect();
    assert_eq!(l1.wells, want1, "level-1 wells are the nine minima");
    assert_eq!(
        l1.recurrent_classes,
        vec![vec![2], vec![3], vec![6, 7], vec![8]],
        "level-1 recurrent classes"
    );
    assert_eq!(l1.transient_indices, vec![0, 1, 4, 5], "level-1 transient wells");

    let l2 = tree.level(2);
    assert_eq!(
        l2.wells,
        vec![vec![6], vec![11], vec![21, 23], vec![29]],
        "level-2 wells"
    );
    let l3 = tree.level(3);
    assert_eq!(l3.wells, vec![vec![11], vec![29]], "level-3 wells");
    let l4 = tree.level(4);
    assert_eq!(l4.wells, vec![vec![11, 29]], "level-4 well");
    assert!(l4.theta_order.is_none(), "no escape from the top level");

    // Escape scales θ^(p)_n ≍ pref · e^{cost·n}: the stored order is
    // pref · e^{−b·n}, so the growing scales carry negative b. The exponents
    // are discrete (snapped to the rational grid, zero tolerance); the
    // prefactors are fitted from the finite-n probes.
    let want_theta = [(0.25, -1.0), (1.0, -2.0), (2.0, -4.0)];
    for (p, (pref, cost)) in want_theta.iter().enumerate() {
        let ord = tree.level(p + 1).theta_order.as_ref().expect("scale defined");
        assert_eq!(ord.cost().unwrap().to_f64(), *cost, "θ exponent, level {}", p + 1);
        let got = ord.prefactor().unwrap().to_f64();
        assert!(
            (got - pref).abs() <= 1e-4 * pref,
            "θ prefactor, level {}: got {got}, want {pref}",
            p + 1
        );
    }

    assert!(elapsed < 10.0, "tree build took {elapsed:.2}s");
    println!(
        "[1/9] hierarchy structure on the landscape example: PASS \
         (q=3, wells 9/4/2/1, θ growth e^n, e^2n, e^4n with prefactors 1/4, 1, 2; {elapsed:.2}s)"
    );
}

#[test]
fn a2_kernel_convergence() {
    let t0 = Instant::now();
    let tree = fig1_tree();
    let spec = models::fig1_spec();
    let ns = [8.0, 10.0, 12.0, 14.0];
    let mut worst_final = 0.0f64;
    for p in 1..=4usize {
        let mut prev = f64::INFINITY;
        let mut last = f64::INFINITY;
        for &n in &ns {
            let chain = FiniteChain::instantiate(&spec, n, P).unwrap();
            let beta = mixing_window(tree, p, n);
            let kernel = chain.transition_kernel(beta).unwrap();
            let mut max_tv = 0.0f64;
            for x in 0..30 {
                let target = tree.limiting_kernel_between(p, x).unwrap();
                let mut tv = 0.0;
                for y in 0..30 {
                    tv += (kernel[x][y].to_f64() - target[y]).abs();
                }
                max_tv = max_tv.max(0.5 * tv);
            }
            assert!(
                max_tv < prev,
                "level {p}: TV {max_tv:.3e} at n={n} not below {prev:.3e}"
            );
            prev = max_tv;
            last = max_tv;
        }
        assert!(last < 0.02, "level {p}: final TV {last:.3e}");
        worst_final = worst_final.max(last);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "kernel sweep took {elapsed:.1}s");
    println!(
        "[2/9] transition kernels between scales converge to the limit kernels: PASS \
         (monotone over n=8..14, worst final TV {worst_final:.2e}; {elapsed:.1}s)"
    );
}

#[test]
fn a3_conditioned_measures() {
    let tree = fig1_tree();
    let chain = FiniteChain::instantiate(&models::fig1_spec(), 25.0, P).unwrap();
    let mut worst = 0.0f64;
    for p in 1..=4usize {
        for j in 0..tree.level(p).wells.len() {
            let d = tree.conditioned_measure_check(&chain, p, j).unwrap();
            worst = worst.max(d);
        }
    }
    assert!(worst < 1e-6, "conditioned-measure deviation {worst:.2e}");

    let pi = chain.stationary().unwrap();
    let mut resid = Float::with_val(P, 0);
    for &x in &tree.level(4).delta_p {
        resid += &pi[x];
    }
    let resid = resid.to_f64();
    assert!(resid < 1e-6, "residual off-well mass {resid:.2e}");
    println!(
        "[3/9] conditioned stationary measures match the well measures at n=25: PASS \
         (max deviation {worst:.2e}, off-well mass {resid:.2e})"
    );
}

#[test]
fn a4_identity_suite() {
    let mut rng = ChaCha12Rng::seed_from_u64(414);
    let fig = models::fig1_spec();
    let mut draws = 0usize;

    for draw in 0..45usize {
        let (spec, n) = if draw < 25 {
            (fig.clone(), 10.0)
        } else {
            let k = draw - 25;
            (models::random_reversible_spec(4 + k % 5, (0.0, 2.0), 4400 + k as u64), 6.0)
        };
        let chain = FiniteChain::instantiate(&spec, n, P).unwrap();
        let v = chain.num_states();
        let pi = chain.stationary().unwrap();

        // Random boundary set, superset to trace on, and boundary data.
        let v0 = pick_distinct(&mut rng, v, 2);
        let size = rng.random_range(3..=(v - 1).max(3)).min(v - 1);
        let mut w = v0.clone();
        let mut rest: Vec<usize> = (0..v).filter(|x| !v0.contains(x)).collect();
        for i in 0..rest.len() {
            let j = rng.random_range(i..rest.len());
            rest.swap(i, j);
        }
        w.extend(rest.into_iter().take(size - v0.len()));
        w.sort_unstable();
        let g: Vec<Float> = v0.iter().map(|_| f(rng.random_range(0.1..3.0))).collect();

        let u = chain.poisson_solve(&v0, &g).unwrap();
        let tr = chain.trace_rates(&w).unwrap();
        let u_w: Vec<Float> = w.iter().map(|&x| u[x].clone()).collect();

        // Generator identity: the traced generator agrees with the full one
        // on the harmonic extension, at every boundary state.
        for (i, &x) in w.iter().enumerate() {
            if !v0.contains(&x) {
                continue;
            }
            let mut full = f(0.0);
            for y in 0..v {
                if y != x {
                    full += Float::with_val(P, &chain.rate(x, y) * &Float::with_val(P, &u[y] - &u[x]));
                }
            }
            let mut traced = f(0.0);
            for j in 0..w.len() {
                if j != i {
                    traced +=
                        Float::with_val(P, &tr.rate(i, j) * &Float::with_val(P, &u_w[j] - &u_w[i]));
                }
            }
            let r = rel_f(&full, &traced);
            assert!(r < 1e-20, "generator identity off by {r:.2e} (draw {draw}, state {x})");
        }

        // Dirichlet restriction: the full form of a function harmonic off W
        // equals π(W) times the trace chain's form of its restriction.
        let d_full = chain.dirichlet_form(&u).unwrap();
        let d_trace = tr.dirichlet_form(&u_w).unwrap();
        let mut mass = f(0.0);
        for &x in &w {
            mass += &pi[x];
        }
        let want = Float::with_val(P, &mass * &d_trace);
        let r = rel_f(&d_full, &want);
        assert!(r < 1e-20, "Dirichlet restriction off by {r:.2e} (draw {draw})");

        // Capacity as the Dirichlet form of the equilibrium potential.
        let (a, b) = (v0[0], v0[1]);
        let h = chain.poisson_solve(&[a, b], &[f(1.0), f(0.0)]).unwrap();
        let d_h = chain.dirichlet_form(&h).unwrap();
        let cap = chain.capacity(&[a], &[b]).unwrap();
        let r = rel_f(&d_h, &cap);
        assert!(r < 1e-20, "capacity identity off by {r:.2e} (draw {draw})");

        // Trace stationarity: the trace chain's stationary measure is the
        // conditioned one.
        let pi_w = tr.stationary().unwrap();
        for (i, &x) in w.iter().enumerate() {
            let cond = Float::with_val(P, &pi[x] / &mass);
            let r = rel_f(&pi_w[i], &cond);
            assert!(r < 1e-20, "trace stationarity off by {r:.2e} (draw {draw}, state {x})");
        }
        draws += 1;
    }

    // Hitting-time bound: capacity over mass bounds short-horizon hitting
    // probabilities from a single starting state.
    let mut holds = 0usize;
    for k in 0..100usize {
        let (spec, n) = if k < 50 {
            (fig.clone(), 8.0)
        } else {
            (models::random_reversible_spec(4 + k % 5, (0.0, 2.0), 4500 + k as u64), 5.0)
        };
        let chain = FiniteChain::instantiate(&spec, n, P).unwrap();
        let v = chain.num_states();
        let x = rng.random_range(0..v);
        let nb = rng.random_range(1..=2usize.min(v - 1));
        let mut b = pick_distinct(&mut rng, v, (nb + 1).min(v));
        b.retain(|&y| y != x);
        b.truncate(nb);
        if b.is_empty() {
            b.push((x + 1) % v);
        }
        let rho = rng.random_range(-4.0..6.0f64).exp();
        if chain.hitting_time_bound_check(&[x], &b, rho).unwrap() {
            holds += 1;
        }
    }
    assert_eq!(holds, 100, "hitting-time bound failed in {} instances", 100 - holds);
    println!(
        "[4/9] potential-theory identity suite: PASS \
         ({draws} draws x 4 identities at 1e-20 relative, hitting bound {holds}/100)"
    );
}

#[test]
fn a5_rate_function_cross_checks() {
    let mut rng = ChaCha12Rng::seed_from_u64(515);

    // Closed reversible form vs the variational characterization on random
    // reversible chains.
    let mut worst_chain = 0.0f64;
    for k in 0..10u64 {
        let spec = models::random_reversible_spec(4 + (k as usize) % 4, (0.0, 2.0), 5500 + k);
        let chain = FiniteChain::instantiate(&spec, 4.0, P).unwrap();
        let v = chain.num_states();
        for _ in 0..5 {
            let mu: Vec<Float> = floored_simplex(&mut rng, v).into_iter().map(f).collect();
            let a = chain.dv_rate_reversible(&mu).unwrap();
            let b = chain.dv_rate_variational(&mu).unwrap();
            worst_chain = worst_chain.max(rel_f(&a, &b));
        }
    }
    assert!(worst_chain < 1e-6, "closed vs variational rate off by {worst_chain:.2e}");

    // The rate function vanishes at the stationary measure.
    let chain10 = FiniteChain::instantiate(&models::fig1_spec(), 10.0, P).unwrap();
    let pi = chain10.stationary().unwrap();
    let at_pi = chain10.dv_rate_reversible(&pi).unwrap().to_f64().abs();
    assert!(at_pi < 1e-20, "rate at the stationary measure: {at_pi:.2e}");

    // Closed vs variational for the limiting functionals, on measures inside
    // their domains.
    let exp = fig1_exp();
    let mut worst_limit = 0.0f64;
    for i in 0..50usize {
        if i < 25 {
            let mu = floored_simplex(&mut rng, 30);
            let a = i0_closed(exp, &mu).unwrap();
            let b = i0_variational(exp, &mu).unwrap();
            worst_limit = worst_limit.max(rel_64(a, b));
        } else {
            let p = 1 + i % 3;
            let mu = level_combo_clear(&mut rng, exp, p);
            let a = ip_closed(exp, p, &mu).unwrap();
            let b = ip_variational(exp, p, &mu).unwrap();
            let av = a.value.value().expect("domain measure has finite value");
            let bv = b.value.value().expect("domain measure has finite value");
            worst_limit = worst_limit.max(rel_64(av, bv));
        }
    }
    assert!(worst_limit < 1e-6, "limit functionals differ by {worst_limit:.2e}");
    println!(
        "[5/9] rate-function cross-checks: PASS \
         (50 finite-n measures at {worst_chain:.1e}, rate(π) {at_pi:.1e}, \
          50 limit measures at {worst_limit:.1e})"
    );
}

#[test]
fn a6_zero_level_sets() {
    let exp = fig1_exp();
    let mut rng = ChaCha12Rng::seed_from_u64(616);
    let (mut zeros, mut positives, mut offs) = (0usize, 0usize, 0usize);
    for i in 0..1000usize {
        let p = 1 + i % 3;
        let kind = i % 10;
        let mu: Vec<f64> = if kind < 4 {
            // Exact combination of next-level limit measures: in the zero set.
            let next = exp.tree.level(p + 1);
            let w = floored_simplex(&mut rng, next.wells.len());
            let mut mu = vec![0.0; 30];
            for (j, &wj) in w.iter().enumerate() {
                for x in 0..30 {
                    mu[x] += wj * next.metastable_measures[j][x];
                }
            }
            zeros += 1;
            mu
        } else if kind < 9 {
            // Generic level-p combination: in the domain, off the zero set.
            positives += 1;
            level_combo_clear(&mut rng, exp, p)
        } else {
            // Mass spread over the whole state space: off the domain.
            offs += 1;
            floored_simplex(&mut rng, 30)
        };

        let eval = ip_closed(exp, p, &mu).unwrap();
        let is_zero = eval.value.value().is_some_and(|v| v.abs() <= 1e-10);
        let decomposes = decompose(&exp.tree, p + 1, &mu, DEFAULT_DECOMPOSE_TOL).is_some();
        assert_eq!(
            is_zero, decomposes,
            "zero set vs next-level decomposition, draw {i} (level {p}, kind {kind})"
        );
        if p < 3 {
            let up = ip_closed(exp, p + 1, &mu).unwrap();
            assert_eq!(
                !up.value.is_infinite(),
                is_zero,
                "finiteness one level up vs vanishing, draw {i} (level {p}, kind {kind})"
            );
        }
    }
    println!(
        "[6/9] zero-level-set structure: PASS \
         (1000 draws: {zeros} zero-set, {positives} positive, {offs} off-domain; \
          boolean agreement exact)"
    );
}

#[test]
fn a7_recovery_sweeps() {
    let t0 = Instant::now();
    let exp = fig1_exp();
    let ns = [10.0, 14.0, 18.0];

    let d1 = delta30(1);
    let d3 = delta30(3);
    let d6 = delta30(6);
    let d14 = delta30(14);
    let d21 = delta30(21);
    let l2m = &exp.tree.level(2).metastable_measures;
    let l3m = &exp.tree.level(3).metastable_measures;
    let r3 = &exp.tree.level(3).reduced_rates;
    let two_state = |a: f64| {
        let s = (2.0 * a * r3[0][1]).sqrt() - (2.0 * (1.0 - a) * r3[1][0]).sqrt();
        0.5 * s * s
    };

    let mut cases: Vec<(usize, Vec<f64>, f64)> = vec![
        (1, d1.clone(), 0.125),
        (1, d3.clone(), 0.25),
        (1, d14.clone(), 0.25),
        (1, d21.clone(), 0.125),
        (1, mix30(&[(0.7, &d21), (0.3, &d6)]), 0.0875),
        (2, l2m[0].clone(), 0.5),
        (2, l2m[2].clone(), 0.5),
        (2, mix30(&[(0.3, &l2m[0]), (0.7, &l2m[1])]), 0.15),
        (2, mix30(&[(0.8, &l2m[2]), (0.2, &l2m[3])]), 0.4),
        (2, mix30(&[(0.5, &l2m[0]), (0.5, &l2m[3])]), 0.25),
    ];
    for a in [0.9, 0.8, 0.7, 0.6, 1.0] {
        cases.push((3, mix30(&[(a, &l3m[0]), (1.0 - a, &l3m[1])]), two_state(a)));
    }

    let mut worst_rel = 0.0f64;
    for (p, mu, want) in &cases {
        let rows = gamma_sweep(exp, *p, mu, &ns).unwrap();
        let target = rows[0].target;
        assert!(
            (target - want).abs() < 1e-5,
            "level {p}: limit value {target} vs expected {want}"
        );
        for k in 1..rows.len() {
            assert!(
                rows[k].abs_err < rows[k - 1].abs_err,
                "level {p}: error not decreasing at n={} (target {want})",
                rows[k].n
            );
        }
        let rel = rows.last().unwrap().abs_err / target;
        assert!(rel < 0.10, "level {p}: final relative error {rel:.3} (target {want})");
        worst_rel = worst_rel.max(rel);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    println!(
        "[7/9] recovery-sequence sweeps converge to the limit values: PASS \
         (15 sweeps over n=10,14,18; errors decreasing; worst final relative error \
          {worst_rel:.1e}; {elapsed:.1}s)"
    );
}

#[test]
fn a8_capacity_sandwich() {
    let mut rng = ChaCha12Rng::seed_from_u64(818);
    let mut pairs = 0usize;
    let mut worst_ratio = 1.0f64; // max of ratio·C⁻¹ deviation factor seen
    let mut worst_cost = 0.0f64;
    for k in 0..20u64 {
        let v = 5 + (k as usize) % 4;
        let spec = models::random_reversible_spec(v, (0.0, 2.0), 8800 + k);
        let pi = stationary_asymptotics(&spec).unwrap();
        let c10 = FiniteChain::instantiate(&spec, 10.0, P).unwrap();
        let c20 = FiniteChain::instantiate(&spec, 20.0, P).unwrap();
        let bound = (v * v) as f64;
        let n_pairs = if k < 10 { 3 } else { 2 };
        for _ in 0..n_pairs {
            let na = rng.random_range(1..=2usize);
            let nb = rng.random_range(1..=2usize);
            let picks = pick_distinct(&mut rng, v, na + nb);
            let a = picks[..na].to_vec();
            let b = picks[na..].to_vec();

            let order = capacity_order(&spec, &pi, &a, &b).unwrap();
            let cost = order.cost().unwrap().to_f64();
            let pref = order.prefactor().unwrap().to_f64();

            let mut caps = Vec::new();
            for (chain, n) in [(&c10, 10.0f64), (&c20, 20.0)] {
                let cap = chain.capacity(&a, &b).unwrap();
                let order_val = Float::with_val(P, -cost * n).exp() * pref;
                let ratio = Float::with_val(P, &cap / &order_val).to_f64();
                assert!(
                    ratio >= 1.0 / bound && ratio <= bound,
                    "capacity/order ratio {ratio:.3e} outside [1/{bound}, {bound}] \
                     (spec {k}, n={n})"
                );
                worst_ratio = worst_ratio.max(ratio.max(1.0 / ratio));
                caps.push(cap);
            }
            let fitted = Float::with_val(P, &caps[0] / &caps[1]).ln().to_f64() / 10.0;
            assert!(
                (fitted - cost).abs() <= 0.05,
                "fitted decay {fitted:.4} vs order exponent {cost:.4} (spec {k})"
            );
            worst_cost = worst_cost.max((fitted - cost).abs());
            pairs += 1;
        }
    }
    assert_eq!(pairs, 50);
    println!(
        "[8/9] capacity sandwiched by its asymptotic order: PASS \
         (50 pairs on 20 specs; worst ratio factor {worst_ratio:.2} vs bound |V|^2, \
          worst fitted-exponent deviation {worst_cost:.1e})"
    );
}

#[test]
fn a9_simulation_cross_check() {
    let chain = FiniteChain::instantiate(&models::fig1_spec(), 8.0, P).unwrap();
    let theta1 = fig1_tree()
        .theta_at(1, 8.0, P)
        .unwrap()
        .expect("first scale defined")
        .to_f64();
    let start = 1usize;
    let reps = 10_000usize;
    let mut worst_z = 0.0f64;
    for (ti, scale) in [0.5f64, 1.0, 2.0].into_iter().enumerate() {
        let t = scale * theta1;
        let kernel = chain.transition_kernel(t).unwrap();
        let probs: Vec<f64> = kernel[start].iter().map(|p| p.to_f64()).collect();
        let mut counts = vec![0usize; 30];
        for r in 0..reps {
            let traj = chain.simulate(start, t, 910_000 + (ti * reps + r) as u64);
            counts[traj.state_at(t)] += 1;
        }
        for y in 0..30 {
            let p = probs[y].clamp(0.0, 1.0);
            let mean = reps as f64 * p;
            let sigma = (reps as f64 * p * (1.0 - p)).sqrt();
            let dev = (counts[y] as f64 - mean).abs();
            assert!(
                dev <= 3.0 * sigma + 1e-9,
                "state {y} at t = {scale}·θ: count {} vs mean {mean:.1} (3σ = {:.1})",
                counts[y],
                3.0 * sigma
            );
            if sigma > 0.0 {
                worst_z = worst_z.max(dev / sigma);
            }
        }
    }
    println!(
        "[9/9] Gillespie marginals match the transition kernel at n=8: PASS \
         (3 x 10^4 replicas at t = θ/2, θ, 2θ; worst z-score {worst_z:.2})"
    );
}
