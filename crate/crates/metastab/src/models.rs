//! Built-in [`RateSpec`] constructors: one-dimensional energy landscapes
//! (including the bundled 30-state example landscape), and seeded random
//! reversible specs for property testing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rug::Rational;

use crate::scale_algebra::{AsymScalar, RateSpec};
use crate::{Error, Result};

/// The energy profile of the bundled example landscape: nine wells of depths
/// between 1 and 3 separated by barriers of heights up to 4, chosen so the
/// metastability hierarchy has four non-trivial time scales.
pub const FIG1_ENERGIES: [f64; 30] = [
    0.0, -1.0, 0.0, -1.0, 0.0, -1.0, -2.0, -1.0, 0.0, -1.0, -2.0, -3.0, -2.0, -1.0,
    -2.0, -1.0, -2.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0,
    -2.0, -3.0,
];

/// Nearest-neighbor spec on `{0, …, m−1}` from an energy vector `H`: each
/// directed edge k → k±1 carries rate e^(−n·[H(k±1) − H(k)]⁺), so downhill
/// jumps run at rate 1 and uphill jumps are exponentially suppressed by the
/// energy gap. The resulting chain is reversible with π_n ∝ e^(−n·H).
///
/// Strict local minima are named `"x1"`, `"x2"`, … in state order; every
/// other state is named by its decimal index.
pub fn landscape_spec(energies: &[f64]) -> Result<RateSpec> {
    let ones = vec![1.0; energies.len().saturating_sub(1)];
    landscape_spec_weighted(energies, &ones)
}

/// [`landscape_spec`] with a positive prefactor per undirected bond: the two
/// rates across bond k ↔ k+1 are both scaled by `weights[k]`, which preserves
/// reversibility while breaking the exact prefactor symmetries of the plain
/// landscape.
pub fn landscape_spec_weighted(energies: &[f64], weights: &[f64]) -> Result<RateSpec> {
    let m = energies.len();
    if m < 2 {
        return Err(Error::Model("a landscape needs at least two sites".into()));
    }
    if weights.len() != m - 1 {
        return Err(Error::Model(format!(
            "expected {} bond weights, got {}",
            m - 1,
            weights.len()
        )));
    }
    let h: Vec<Rational> = energies
        .iter()
        .map(|&e| Rational::from_f64(e).ok_or_else(|| Error::Model("non-finite energy".into())))
        .collect::<Result<_>>()?;
    let w: Vec<Rational> = weights
        .iter()
        .map(|&q| match Rational::from_f64(q) {
            Some(r) if r.cmp0() == std::cmp::Ordering::Greater => Ok(r),
            _ => Err(Error::Model("bond weights must be positive and finite".into())),
        })
        .collect::<Result<_>>()?;

    let mut names = Vec::with_capacity(m);
    let mut minimum = 0usize;
    for k in 0..m {
        let below_left = k == 0 || h[k] < h[k - 1];
        let below_right = k + 1 == m || h[k] < h[k + 1];
        if below_left && below_right && !(k == 0 && k + 1 == m) {
            minimum += 1;
            names.push(format!("x{minimum}"));
        } else {
            names.push(k.to_string());
        }
    }

    let mut spec = RateSpec::new(names)?;
    for k in 0..m - 1 {
        let up = Rational::from(&h[k + 1] - &h[k]);
        let (cost_right, cost_left) = if up.cmp0() == std::cmp::Ordering::Less {
            (Rational::new(), -up)
        } else {
            (up, Rational::new())
        };
        spec.add_edge(k, k + 1, AsymScalar::term(w[k].clone(), cost_right))?;
        spec.add_edge(k + 1, k, AsymScalar::term(w[k].clone(), cost_left))?;
    }
    Ok(spec)
}

/// The bundled 30-state example landscape ([`FIG1_ENERGIES`]); its nine wells
/// are the states named `"x1"` … `"x9"`.
pub fn fig1_spec() -> RateSpec {
    landscape_spec(&FIG1_ENERGIES).expect("the bundled landscape is valid")
}

/// A seeded random reversible spec: a random connected graph whose states
/// carry potentials drawn from the quarter-integer grid in `potential_range`,
/// with rate(x,y) = q·e^(−n·([H(y) − H(x)]⁺ + s)) for a symmetric positive
/// prefactor q and a symmetric extra cost s ≥ 0 per bond. Detailed balance
/// then holds exactly in the semiring with π_n ∝ e^(−n·H), and spanning-tree
/// bonds use s = 0 so the cost-0 skeleton is never empty.
///
/// Deterministic in `seed`. Panics if `num_states < 2` or the range is not an
/// ordered pair of finite numbers.
pub fn random_reversible_spec(
    num_states: usize,
    potential_range: (f64, f64),
    seed: u64,
) -> RateSpec {
    assert!(num_states >= 2, "random specs need at least two states");
    let (lo, hi) = potential_range;
    assert!(lo.is_finite() && hi.is_finite() && lo <= hi, "bad potential range");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let lo_q = Rational::from_f64(lo).expect("finite");
    let grid_steps = ((hi - lo) * 4.0).floor() as i64;
    let h: Vec<Rational> = (0..num_states)
        .map(|_| Rational::from((rng.random_range(0..=grid_steps), 4)) + &lo_q)
        .collect();

    let mut spec = RateSpec::with_num_states(num_states);
    let bond = |spec: &mut RateSpec,
                    rng: &mut ChaCha12Rng,
                    x: usize,
                    y: usize,
                    extra_cost: Rational| {
        let q = Rational::from((rng.random_range(1..9i64), rng.random_range(1..4i64)));
        let up = Rational::from(&h[y] - &h[x]);
        let (cost_xy, cost_yx) = if up.cmp0() == std::cmp::Ordering::Less {
            (Rational::new(), -up)
        } else {
            (up, Rational::new())
        };
        spec.add_edge(x, y, AsymScalar::term(q.clone(), cost_xy + &extra_cost))
            .expect("fresh bond");
        spec.add_edge(y, x, AsymScalar::term(q, cost_yx + extra_cost))
            .expect("fresh bond");
    };

    // Random spanning tree: connectivity, with zero extra cost on its bonds.
    let mut tree = std::collections::BTreeSet::new();
    for x in 1..num_states {
        let p = rng.random_range(0..x);
        tree.insert((p, x));
        bond(&mut spec, &mut rng, p, x, Rational::new());
    }
    // Sparse extra bonds with a small symmetric cost offset.
    for x in 0..num_states {
        for y in (x + 1)..num_states {
            if !tree.contains(&(x, y)) && rng.random_bool(0.25) {
                let s = Rational::from((rng.random_range(0..5i64), 4));
                bond(&mut spec, &mut rng, x, y, s);
            }
        }
    }
    spec
}
