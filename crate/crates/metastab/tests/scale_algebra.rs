//! Oracle tests for the asymptotic-scale semiring: closed-form examples,
//! algebraic laws on random inputs, an independent brute-force arborescence
//! enumerator as the stationary-asymptotics oracle, and widest-path capacity
//! orders on the bundled landscape.

use metastab::models;
use metastab::rug::Rational;
use metastab::scale_algebra::{
    capacity_order, compare_order, detailed_balance_check, semiring_add, semiring_mul,
    stationary_asymptotics, stationary_asymptotics_capped, AsymScalar, OrderRel, RateSpec,
};
use metastab::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn term(pref: (i64, i64), cost: (i64, i64)) -> AsymScalar {
    AsymScalar::term(Rational::from(pref), Rational::from(cost))
}

fn t(pref: i64, cost: i64) -> AsymScalar {
    term((pref, 1), (cost, 1))
}

#[test]
fn add_equal_costs_sums_prefactors() {
    assert_eq!(semiring_add(&t(1, 1), &t(2, 1)), t(3, 1));
}

#[test]
fn add_returns_dominant_term() {
    assert_eq!(semiring_add(&t(1, 0), &t(5, 2)), t(1, 0));
}

#[test]
fn zero_is_additive_identity() {
    let a = term((7, 3), (-2, 5));
    assert_eq!(semiring_add(&AsymScalar::zero(), &a), a);
    assert_eq!(semiring_add(&a, &AsymScalar::zero()), a);
}

#[test]
fn mul_multiplies_prefactors_adds_costs() {
    assert_eq!(semiring_mul(&t(2, 1), &t(3, 2)), t(6, 3));
}

#[test]
fn one_is_multiplicative_identity() {
    let a = term((5, 2), (7, 4));
    assert_eq!(semiring_mul(&a, &AsymScalar::one()), a);
}

#[test]
fn mul_costs_cancel() {
    assert_eq!(semiring_mul(&term((1, 2), (-3, 1)), &t(1, 3)), term((1, 2), (0, 1)));
}

#[test]
fn zero_annihilates() {
    assert!(semiring_mul(&AsymScalar::zero(), &t(3, 1)).is_zero());
}

#[test]
fn compare_order_examples() {
    assert_eq!(compare_order(&t(1, 2), &t(1, 1)).unwrap(), OrderRel::Precedes);
    assert_eq!(
        compare_order(&t(2, 1), &t(4, 1)).unwrap(),
        OrderRel::SameOrder(Rational::from((1, 2)))
    );
    assert_eq!(compare_order(&t(1, 0), &t(1, 1)).unwrap(), OrderRel::Succeeds);
    assert!(matches!(
        compare_order(&AsymScalar::zero(), &t(1, 1)),
        Err(Error::Domain(_))
    ));
}

#[test]
fn compare_order_matches_numeric_ratio_regimes() {
    // Cost differences can be as small as 1/6 on these grids, so probe far
    // enough out that e^(n/6) clears the regime thresholds.
    let mut rng = ChaCha12Rng::seed_from_u64(123);
    let n = 200.0;
    for _ in 0..200 {
        let a = term((rng.random_range(1..40), rng.random_range(1..8)), {
            (rng.random_range(-6..6), rng.random_range(1..4))
        });
        let b = term((rng.random_range(1..40), rng.random_range(1..8)), {
            (rng.random_range(-6..6), rng.random_range(1..4))
        });
        let ratio = a.eval(n, 128) / b.eval(n, 128);
        let ratio = ratio.to_f64();
        match compare_order(&a, &b).unwrap() {
            OrderRel::Precedes => assert!(ratio < 1e-6, "ratio {ratio} should vanish"),
            OrderRel::Succeeds => assert!(ratio > 1e6, "ratio {ratio} should diverge"),
            OrderRel::SameOrder(c) => {
                let c = c.to_f64();
                assert!((ratio - c).abs() <= 1e-9 * c.abs(), "ratio {ratio} vs {c}");
            }
        }
    }
}

proptest! {
    #[test]
    fn semiring_laws(
        seeds in proptest::collection::vec((1i64..50, -5i64..6, 1i64..5), 3)
    ) {
        let vals: Vec<AsymScalar> = seeds
            .iter()
            .map(|&(p, cn, cd)| term((p, 1), (cn, cd)))
            .collect();
        let (a, b, c) = (&vals[0], &vals[1], &vals[2]);
        // Commutativity.
        prop_assert_eq!(semiring_add(a, b), semiring_add(b, a));
        prop_assert_eq!(semiring_mul(a, b), semiring_mul(b, a));
        // Associativity.
        prop_assert_eq!(
            semiring_add(&semiring_add(a, b), c),
            semiring_add(a, &semiring_add(b, c))
        );
        prop_assert_eq!(
            semiring_mul(&semiring_mul(a, b), c),
            semiring_mul(a, &semiring_mul(b, c))
        );
        // Distributivity.
        prop_assert_eq!(
            semiring_mul(a, &semiring_add(b, c)),
            semiring_add(&semiring_mul(a, b), &semiring_mul(a, c))
        );
    }
}

/// Independent arborescence oracle: enumerate every parent map on V \ {root},
/// keep the acyclic ones, and sum the rate products in the semiring.
fn brute_force_stationary(spec: &RateSpec) -> Vec<AsymScalar> {
    let v = spec.num_states();
    let mut totals = vec![AsymScalar::zero(); v];
    for root in 0..v {
        let others: Vec<usize> = (0..v).filter(|&x| x != root).collect();
        // Candidate parents for each non-root vertex.
        let choices: Vec<Vec<usize>> = others
            .iter()
            .map(|&u| (0..v).filter(|&w| w != u && !spec.rate(u, w).is_zero()).collect())
            .collect();
        let mut pick = vec![0usize; others.len()];
        'outer: loop {
            // Evaluate the current parent assignment.
            let mut parent = vec![usize::MAX; v];
            for (i, &u) in others.iter().enumerate() {
                parent[u] = choices[i][pick[i]];
            }
            let mut acyclic = true;
            for &start in &others {
                let mut seen = vec![false; v];
                let mut x = start;
                while x != root {
                    if seen[x] {
                        acyclic = false;
                        break;
                    }
                    seen[x] = true;
                    x = parent[x];
                }
                if !acyclic {
                    break;
                }
            }
            if acyclic {
                let mut w = AsymScalar::one();
                for &u in &others {
                    w = semiring_mul(&w, &spec.rate(u, parent[u]));
                }
                totals[root] = semiring_add(&totals[root], &w);
            }
            // Advance the mixed-radix counter.
            for i in 0..pick.len() {
                pick[i] += 1;
                if pick[i] < choices[i].len() {
                    continue 'outer;
                }
                pick[i] = 0;
            }
            break;
        }
    }
    // Normalize so the semiring sum is (1, 0).
    let mut sum = AsymScalar::zero();
    for t in &totals {
        sum = semiring_add(&sum, t);
    }
    totals.iter().map(|t| t.div(&sum)).collect()
}

fn random_small_spec(rng: &mut ChaCha12Rng, states: usize) -> RateSpec {
    let mut spec = RateSpec::with_num_states(states);
    // A random ring keeps the union graph strongly connected; sprinkle extras.
    for x in 0..states {
        let y = (x + 1) % states;
        spec.add_edge(x, y, t(rng.random_range(1..5), rng.random_range(0..3))).unwrap();
        spec.add_edge(y, x, t(rng.random_range(1..5), rng.random_range(0..3))).unwrap();
    }
    for x in 0..states {
        for y in 0..states {
            if x != y && spec.rate(x, y).is_zero() && rng.random_bool(0.3) {
                spec.add_edge(x, y, t(rng.random_range(1..5), rng.random_range(0..3)))
                    .unwrap();
            }
        }
    }
    spec
}

#[test]
fn stationary_matches_two_state_detailed_balance() {
    let mut spec = RateSpec::with_num_states(2);
    spec.add_edge(0, 1, t(1, 1)).unwrap();
    spec.add_edge(1, 0, t(1, 0)).unwrap();
    let pi = stationary_asymptotics(&spec).unwrap();
    assert_eq!(pi[0], t(1, 0));
    assert_eq!(pi[1], t(1, 1));
}

#[test]
fn stationary_matches_brute_force_enumeration() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    for states in [3usize, 4, 5] {
        for _ in 0..6 {
            let spec = random_small_spec(&mut rng, states);
            let expected = brute_force_stationary(&spec);
            let got = stationary_asymptotics(&spec).unwrap();
            assert_eq!(got, expected, "states = {states}");
        }
    }
}

#[test]
fn stationary_cap_is_enforced() {
    let spec = models::fig1_spec();
    assert!(matches!(stationary_asymptotics(&spec), Err(Error::Capacity(_))));
    // The same landscape passes with a raised cap: a path graph enumerates fast.
    let pi = stationary_asymptotics_capped(&spec, 48, 20_000_000).unwrap();
    assert_eq!(pi.len(), 30);
}

#[test]
fn fig1_stationary_orders() {
    let spec = models::fig1_spec();
    let pi = stationary_asymptotics_capped(&spec, 48, 20_000_000).unwrap();
    // Deep wells x4 (state 11) and x9 (state 29) carry mass 1/2 each in the
    // limit; the shallow well x1 (state 1) sits two energy units higher.
    assert_eq!(pi[11], term((1, 2), (0, 1)));
    assert_eq!(pi[29], term((1, 2), (0, 1)));
    assert_eq!(pi[1], term((1, 2), (2, 1)));
    // Saddle states one unit above their neighbors, e.g. state 19 at H = 1.
    assert_eq!(pi[19], term((1, 2), (4, 1)));
}

#[test]
fn tree_walk_oracle_on_reversible_specs() {
    // On a reversible spec the stationary order follows from detailed balance
    // along any spanning tree: π(y)/π(x) = R(x,y)/R(y,x) for tree edges.
    let mut rng = ChaCha12Rng::seed_from_u64(40);
    for _ in 0..10 {
        let spec = models::random_reversible_spec(7, (0.0, 3.0), rng.random());
        let pi = stationary_asymptotics(&spec).unwrap();
        // Walk the edges of a BFS tree over the symmetric support.
        let mut ratio_pi = vec![None::<AsymScalar>; 7];
        ratio_pi[0] = Some(AsymScalar::one());
        let mut queue = vec![0usize];
        while let Some(x) = queue.pop() {
            for y in 0..7 {
                if ratio_pi[y].is_none() && !spec.rate(x, y).is_zero() {
                    let up = spec.rate(x, y);
                    let down = spec.rate(y, x);
                    assert!(!down.is_zero(), "reversible support must be symmetric");
                    let r = semiring_mul(&ratio_pi[x].clone().unwrap(), &up.div(&down));
                    ratio_pi[y] = Some(r);
                    queue.push(y);
                }
            }
        }
        // Normalize the tree-walk potential and compare exactly.
        let pots: Vec<AsymScalar> = ratio_pi.into_iter().map(|r| r.unwrap()).collect();
        let mut sum = AsymScalar::zero();
        for p in &pots {
            sum = semiring_add(&sum, p);
        }
        let expected: Vec<AsymScalar> = pots.iter().map(|p| p.div(&sum)).collect();
        assert_eq!(pi, expected);
    }
}

#[test]
fn detailed_balance_holds_on_fig1() {
    let spec = models::fig1_spec();
    assert_eq!(detailed_balance_check(&spec).unwrap(), None);
}

#[test]
fn detailed_balance_fails_on_biased_cycle_with_witness() {
    let mut spec = RateSpec::with_num_states(3);
    for (x, y) in [(0, 1), (1, 2), (2, 0)] {
        spec.add_edge(x, y, t(1, 0)).unwrap();
    }
    spec.add_edge(1, 0, t(2, 0)).unwrap();
    spec.add_edge(2, 1, t(1, 0)).unwrap();
    spec.add_edge(0, 2, t(1, 0)).unwrap();
    let witness = detailed_balance_check(&spec).unwrap();
    let (x, y) = witness.expect("cycle bias must be detected");
    // The violating edge must actually violate π(x)R(x,y) = π(y)R(y,x).
    let pi = stationary_asymptotics(&spec).unwrap();
    let lhs = semiring_mul(&pi[x], &spec.rate(x, y));
    let rhs = semiring_mul(&pi[y], &spec.rate(y, x));
    assert_ne!(lhs, rhs);
}

#[test]
fn detailed_balance_holds_for_symmetric_rates() {
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let mut spec = RateSpec::with_num_states(5);
    for x in 0..5usize {
        for y in (x + 1)..5 {
            let r = t(rng.random_range(1..9), rng.random_range(0..4));
            spec.add_edge(x, y, r.clone()).unwrap();
            spec.add_edge(y, x, r).unwrap();
        }
    }
    assert_eq!(detailed_balance_check(&spec).unwrap(), None);
}

#[test]
fn capacity_order_single_edge_path() {
    // Two states joined by a cost-0 edge with π(0) = (1,0)-order mass: the
    // widest path is that edge and c equals its conductance.
    let mut spec = RateSpec::with_num_states(2);
    spec.add_edge(0, 1, t(1, 0)).unwrap();
    spec.add_edge(1, 0, t(1, 2)).unwrap();
    let pi = stationary_asymptotics(&spec).unwrap();
    let c = capacity_order(&spec, &pi, &[0], &[1]).unwrap();
    assert_eq!(c, semiring_mul(&pi[0], &spec.rate(0, 1)));
}

#[test]
fn capacity_order_fig1_shallow_well() {
    let spec = models::fig1_spec();
    let pi = stationary_asymptotics_capped(&spec, 48, 20_000_000).unwrap();
    let minima = [1usize, 3, 6, 11, 14, 16, 21, 23, 29];
    let b: Vec<usize> = minima[1..].to_vec();
    let c = capacity_order(&spec, &pi, &[1], &b).unwrap();
    // Conductance through the H = 0 saddle next to x1, over Z_n ~ 2e^{3n}.
    assert_eq!(c.cost().unwrap(), &Rational::from(3));
    // π(x1)/c has cost −1: the escape rate of the shallow wells fixes θ^(1).
    let escape = pi[1].div(&c);
    assert_eq!(escape.cost().unwrap(), &Rational::from(-1));
}

#[test]
fn capacity_order_fig1_deep_pair() {
    let spec = models::fig1_spec();
    let pi = stationary_asymptotics_capped(&spec, 48, 20_000_000).unwrap();
    // Between the two global minima every path crosses an H = 1 ridge, four
    // energy units above the wells: conductance cost 1 + 3 = 4.
    let c = capacity_order(&spec, &pi, &[11], &[29]).unwrap();
    assert_eq!(c.cost().unwrap(), &Rational::from(4));
    assert_eq!(c.prefactor().unwrap(), &Rational::from((1, 2)));
}

#[test]
fn capacity_order_rejects_non_reversible_and_overlap() {
    let mut spec = RateSpec::with_num_states(3);
    for (x, y) in [(0, 1), (1, 2), (2, 0)] {
        spec.add_edge(x, y, t(1, 0)).unwrap();
    }
    spec.add_edge(1, 0, t(2, 0)).unwrap();
    spec.add_edge(2, 1, t(1, 0)).unwrap();
    spec.add_edge(0, 2, t(1, 0)).unwrap();
    let pi = stationary_asymptotics(&spec).unwrap();
    assert!(matches!(
        capacity_order(&spec, &pi, &[0], &[1]),
        Err(Error::Unsupported(_))
    ));

    let fig1 = models::fig1_spec();
    let pi1 = stationary_asymptotics_capped(&fig1, 48, 20_000_000).unwrap();
    assert!(matches!(
        capacity_order(&fig1, &pi1, &[1, 3], &[3, 6]),
        Err(Error::Domain(_))
    ));
}

#[test]
fn widest_path_ties_take_max_prefactor() {
    // Two parallel two-edge routes with equal bottleneck cost but different
    // prefactors; the reported bound must pick the larger prefactor.
    let mut spec = RateSpec::with_num_states(4);
    // Route through 1 (bottleneck prefactor 3) and through 2 (prefactor 1).
    let sym = |spec: &mut RateSpec, x: usize, y: usize, r: AsymScalar| {
        spec.add_edge(x, y, r.clone()).unwrap();
        spec.add_edge(y, x, r).unwrap();
    };
    sym(&mut spec, 0, 1, t(3, 1));
    sym(&mut spec, 1, 3, t(5, 0));
    sym(&mut spec, 0, 2, t(1, 1));
    sym(&mut spec, 2, 3, t(5, 0));
    let pi = stationary_asymptotics(&spec).unwrap();
    let c = capacity_order(&spec, &pi, &[0], &[3]).unwrap();
    let direct = semiring_mul(&pi[0], &spec.rate(0, 1));
    assert_eq!(c, direct);
}
