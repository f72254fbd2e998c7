//! Exact symbolic arithmetic on sequences of the form a·e^(−b·n).
//!
//! Every jump rate, stationary weight, conductance, and time scale handled by
//! this crate is (a finite semiring combination of) such sequences, so their
//! asymptotics can be tracked exactly: addition keeps the dominant term
//! (smaller cost wins, equal costs add prefactors) and multiplication
//! multiplies prefactors while adding costs. Prefactors and costs are exact
//! rationals — the accepted input grammars only produce rationals, so order
//! comparisons never need a tolerance.
//!
//! On top of the scalar algebra the module provides the three graph-level
//! primitives the hierarchy construction needs: stationary asymptotics via
//! spanning-arborescence enumeration (the Markov-chain tree theorem evaluated
//! in the semiring), an exact detailed-balance certificate, and widest-path
//! capacity orders for reversible specifications.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul};

use rug::{Float, Rational};

use crate::{Error, Result};

/// One asymptotic scale: the sequence n ↦ prefactor·e^(−cost·n), or the zero
/// sequence, which is a distinct sentinel rather than a zero prefactor.
///
/// Negative costs represent growing sequences. The derived equality is exact
/// structural equality of prefactor and cost; the `Ord` implementation is the
/// eventual pointwise (dominance) order: smaller cost sorts larger, equal
/// costs compare prefactors, and zero sorts below everything.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AsymScalar {
    repr: Option<(Rational, Rational)>,
}

impl AsymScalar {
    /// The zero sequence.
    pub fn zero() -> Self {
        AsymScalar { repr: None }
    }

    /// The constant sequence 1.
    pub fn one() -> Self {
        AsymScalar::term(Rational::from(1), Rational::from(0))
    }

    /// The sequence prefactor·e^(−cost·n).
    ///
    /// Panics if `prefactor ≤ 0`: the zero sequence is [`AsymScalar::zero`],
    /// never a vanishing prefactor.
    pub fn term(prefactor: Rational, cost: Rational) -> Self {
        assert!(
            prefactor.cmp0() == Ordering::Greater,
            "asymptotic terms require a positive prefactor"
        );
        AsymScalar { repr: Some((prefactor, cost)) }
    }

    /// Convenience constructor from floats; both are converted exactly (every
    /// finite float is rational). Panics on non-finite input or `prefactor ≤ 0`.
    pub fn from_f64s(prefactor: f64, cost: f64) -> Self {
        let p = Rational::from_f64(prefactor).expect("finite prefactor");
        let c = Rational::from_f64(cost).expect("finite cost");
        AsymScalar::term(p, c)
    }

    pub fn is_zero(&self) -> bool {
        self.repr.is_none()
    }

    /// The prefactor, or `None` for the zero sequence.
    pub fn prefactor(&self) -> Option<&Rational> {
        self.repr.as_ref().map(|(p, _)| p)
    }

    /// The cost (decay exponent), or `None` for the zero sequence.
    pub fn cost(&self) -> Option<&Rational> {
        self.repr.as_ref().map(|(_, c)| c)
    }

    /// Exact quotient. Panics when dividing by the zero sequence.
    pub fn div(&self, other: &AsymScalar) -> AsymScalar {
        let (dp, dc) = other.repr.as_ref().expect("division by the zero sequence");
        match &self.repr {
            None => AsymScalar::zero(),
            Some((p, c)) => AsymScalar::term(
                Rational::from(p / dp),
                Rational::from(c - dc),
            ),
        }
    }

    /// Numeric value at a concrete parameter: prefactor·e^(−cost·n).
    pub fn eval(&self, n: f64, prec: u32) -> Float {
        match &self.repr {
            None => Float::with_val(prec, 0),
            Some((p, c)) => {
                let mut e = Float::with_val(prec, c);
                e *= -n;
                let e = e.exp();
                e * Float::with_val(prec, p)
            }
        }
    }
}

impl fmt::Display for AsymScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            None => write!(f, "0"),
            Some((p, c)) => write!(f, "{p}·e^(-{c}·n)"),
        }
    }
}

impl PartialOrd for AsymScalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AsymScalar {
    /// Eventual dominance order: a > b means a_n/b_n → ∞ or → c > 1, with the
    /// prefactor breaking equal-cost ties; zero is the minimum.
    fn cmp(&self, other: &Self) -> Ordering {
        match (&self.repr, &other.repr) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some((pa, ca)), Some((pb, cb))) => cb.cmp(ca).then_with(|| pa.cmp(pb)),
        }
    }
}

/// Semiring sum: the dominant term. Smaller cost wins outright; equal costs
/// add prefactors; zero is the identity.
pub fn semiring_add(a: &AsymScalar, b: &AsymScalar) -> AsymScalar {
    match (&a.repr, &b.repr) {
        (None, _) => b.clone(),
        (_, None) => a.clone(),
        (Some((pa, ca)), Some((pb, cb))) => match ca.cmp(cb) {
            Ordering::Less => a.clone(),
            Ordering::Greater => b.clone(),
            Ordering::Equal => AsymScalar::term(Rational::from(pa + pb), ca.clone()),
        },
    }
}

/// Semiring product: prefactors multiply, costs add, zero annihilates.
pub fn semiring_mul(a: &AsymScalar, b: &AsymScalar) -> AsymScalar {
    match (&a.repr, &b.repr) {
        (None, _) | (_, None) => AsymScalar::zero(),
        (Some((pa, ca)), Some((pb, cb))) => {
            AsymScalar::term(Rational::from(pa * pb), Rational::from(ca + cb))
        }
    }
}

impl Add for &AsymScalar {
    type Output = AsymScalar;
    fn add(self, rhs: &AsymScalar) -> AsymScalar {
        semiring_add(self, rhs)
    }
}

impl Mul for &AsymScalar {
    type Output = AsymScalar;
    fn mul(self, rhs: &AsymScalar) -> AsymScalar {
        semiring_mul(self, rhs)
    }
}

/// Verdict of an order comparison between two nonzero scales.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OrderRel {
    /// a ≺ b: a_n/b_n → 0.
    Precedes,
    /// a ≍ b with limit ratio a_n/b_n → the enclosed positive rational.
    SameOrder(Rational),
    /// a ≻ b: a_n/b_n → ∞.
    Succeeds,
}

/// Compares two scales in the ≺ / ≍ / ≻ sense. The zero sequence has no
/// comparison class and is rejected as a domain error.
pub fn compare_order(a: &AsymScalar, b: &AsymScalar) -> Result<OrderRel> {
    let (pa, ca) = a
        .repr
        .as_ref()
        .ok_or_else(|| Error::Domain("compare_order: zero sequence argument".into()))?;
    let (pb, cb) = b
        .repr
        .as_ref()
        .ok_or_else(|| Error::Domain("compare_order: zero sequence argument".into()))?;
    Ok(match ca.cmp(cb) {
        Ordering::Greater => OrderRel::Precedes,
        Ordering::Less => OrderRel::Succeeds,
        Ordering::Equal => OrderRel::SameOrder(Rational::from(pa / pb)),
    })
}

/// A one-parameter family of chains on a finite state space: a directed graph
/// whose edges carry [`AsymScalar`] jump rates R_n(x,y) = c·e^(−e·n) with
/// c > 0 and e ≥ 0, strongly connected as a union graph so every instantiated
/// chain is irreducible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RateSpec {
    names: Vec<String>,
    edges: BTreeMap<(usize, usize), (Rational, Rational)>,
}

impl RateSpec {
    /// A spec over explicitly named states (names must be distinct).
    pub fn new(names: Vec<String>) -> Result<RateSpec> {
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !seen.insert(n.clone()) {
                return Err(Error::Model(format!("duplicate state name {n:?}")));
            }
        }
        Ok(RateSpec { names, edges: BTreeMap::new() })
    }

    /// A spec over states named by their decimal indices.
    pub fn with_num_states(n: usize) -> RateSpec {
        RateSpec {
            names: (0..n).map(|i| i.to_string()).collect(),
            edges: BTreeMap::new(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, x: usize) -> &str {
        &self.names[x]
    }

    pub fn state_by_name(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Adds the directed edge x → y. Costs must be non-negative (so that
    /// every R_n(x,y) converges), prefactors positive, and self-loops and
    /// duplicates are rejected.
    pub fn add_edge(&mut self, from: usize, to: usize, rate: AsymScalar) -> Result<()> {
        if from == to {
            return Err(Error::Domain(format!("self-loop at state {from}")));
        }
        if from >= self.num_states() || to >= self.num_states() {
            return Err(Error::Domain(format!("edge ({from}, {to}) out of range")));
        }
        let Some((p, c)) = rate.repr else {
            return Err(Error::Domain(format!(
                "edge ({from}, {to}): the zero sequence is not a rate; omit the edge"
            )));
        };
        if c.cmp0() == Ordering::Less {
            return Err(Error::Model(format!(
                "edge ({from}, {to}) has negative cost {c}; rates must stay bounded"
            )));
        }
        if self.edges.insert((from, to), (p, c)).is_some() {
            return Err(Error::Domain(format!("duplicate edge ({from}, {to})")));
        }
        Ok(())
    }

    /// The rate on x → y; the zero sequence when the edge is absent.
    pub fn rate(&self, from: usize, to: usize) -> AsymScalar {
        match self.edges.get(&(from, to)) {
            None => AsymScalar::zero(),
            Some((p, c)) => AsymScalar::term(p.clone(), c.clone()),
        }
    }

    /// All edges in deterministic (source, target) order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, AsymScalar)> + '_ {
        self.edges
            .iter()
            .map(|(&(x, y), (p, c))| (x, y, AsymScalar::term(p.clone(), c.clone())))
    }

    /// Checks the standing model assumptions: at least two states, and strong
    /// connectivity of the union graph (irreducibility of every instance).
    pub fn validate(&self) -> Result<()> {
        let v = self.num_states();
        if v < 2 {
            return Err(Error::Model("a spec needs at least two states".into()));
        }
        let succ = |x: usize| -> Vec<usize> {
            self.edges.range((x, 0)..(x + 1, 0)).map(|(&(_, y), _)| y).collect()
        };
        let comps = crate::graph::sccs(v, &succ);
        if comps.len() != 1 {
            return Err(Error::Model(format!(
                "the union graph is not strongly connected ({} components)",
                comps.len()
            )));
        }
        Ok(())
    }
}

/// Default cap on the state count for arborescence enumeration.
pub const ARBORESCENCE_STATE_CAP: usize = 16;
/// Default cap on enumeration work (search nodes) before giving up.
pub const ARBORESCENCE_WORK_CAP: u64 = 20_000_000;

/// Stationary-measure asymptotics by the Markov-chain tree theorem: for each
/// root x the semiring sum over spanning arborescences directed toward x of
/// the product of edge rates, normalized so the results semiring-sum to the
/// constant sequence 1. Exact.
///
/// Enumeration is exponential in general, so the state count is capped (the
/// default suits desk-scale graphs); larger problems should use the finite-n
/// engine instead.
pub fn stationary_asymptotics(spec: &RateSpec) -> Result<Vec<AsymScalar>> {
    stationary_asymptotics_capped(spec, ARBORESCENCE_STATE_CAP, ARBORESCENCE_WORK_CAP)
}

/// [`stationary_asymptotics`] with explicit state and work caps.
pub fn stationary_asymptotics_capped(
    spec: &RateSpec,
    max_states: usize,
    work_cap: u64,
) -> Result<Vec<AsymScalar>> {
    spec.validate()?;
    let v = spec.num_states();
    if v > max_states {
        return Err(Error::Capacity(format!(
            "{v} states exceed the arborescence cap {max_states}; \
             use the finite-n engine (finite_chain::stationary) or raise the cap"
        )));
    }

    // Adjacency with cheapest edges first, and per-vertex minimal out-cost
    // for the admissible pruning bound.
    let mut out: Vec<Vec<(usize, Rational, Rational)>> = vec![Vec::new(); v];
    for (x, y, r) in spec.edges() {
        let (p, c) = (r.prefactor().unwrap().clone(), r.cost().unwrap().clone());
        out[x].push((y, p, c));
    }
    for o in out.iter_mut() {
        o.sort_by(|a, b| a.2.cmp(&b.2).then_with(|| a.0.cmp(&b.0)));
    }
    let min_cost: Vec<Rational> = out
        .iter()
        .map(|o| o.iter().map(|(_, _, c)| c.clone()).min().unwrap_or_default())
        .collect();

    let mut work: u64 = 0;
    let mut totals = Vec::with_capacity(v);
    for root in 0..v {
        totals.push(enumerate_root(v, root, &out, &min_cost, &mut work, work_cap)?);
    }

    let mut sum = AsymScalar::zero();
    for t in &totals {
        sum = semiring_add(&sum, t);
    }
    if sum.is_zero() {
        return Err(Error::Model("no spanning arborescence exists".into()));
    }
    Ok(totals.iter().map(|t| t.div(&sum)).collect())
}

/// Sum over arborescences rooted at `root` (edges directed toward the root),
/// exact in the semiring: minimal total cost, prefactors added over all
/// minimal-cost trees.
fn enumerate_root(
    v: usize,
    root: usize,
    out: &[Vec<(usize, Rational, Rational)>],
    min_cost: &[Rational],
    work: &mut u64,
    work_cap: u64,
) -> Result<AsymScalar> {
    // Assign parents in order of (reverse-edge) BFS distance to the root, so
    // that wrong-direction choices close short cycles and are cut early.
    let mut order = Vec::with_capacity(v - 1);
    {
        let mut dist = vec![usize::MAX; v];
        dist[root] = 0;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(y) = queue.pop_front() {
            for (x, o) in out.iter().enumerate() {
                if dist[x] == usize::MAX && o.iter().any(|(t, _, _)| *t == y) {
                    dist[x] = dist[y] + 1;
                    queue.push_back(x);
                }
            }
        }
        let mut nodes: Vec<usize> = (0..v).filter(|&x| x != root).collect();
        if nodes.iter().any(|&x| dist[x] == usize::MAX) {
            // No path to the root: no arborescence with this root.
            return Ok(AsymScalar::zero());
        }
        nodes.sort_by_key(|&x| (dist[x], x));
        order.extend(nodes);
    }

    // Suffix sums of minimal out-costs for the lower bound.
    let mut suffix = vec![Rational::new(); order.len() + 1];
    for i in (0..order.len()).rev() {
        suffix[i] = Rational::from(&suffix[i + 1] + &min_cost[order[i]]);
    }

    struct Search<'a> {
        order: &'a [usize],
        out: &'a [Vec<(usize, Rational, Rational)>],
        suffix: &'a [Rational],
        root: usize,
        parent: Vec<usize>,
        chosen: Vec<(Rational, Rational)>,
        cost_so_far: Rational,
        best_cost: Option<Rational>,
        pref_sum: Rational,
        work: u64,
        work_cap: u64,
    }

    impl Search<'_> {
        fn run(&mut self, depth: usize) -> Result<()> {
            if depth == self.order.len() {
                let total = self.cost_so_far.clone();
                match &self.best_cost {
                    Some(b) if *b < total => {}
                    Some(b) if *b == total => {
                        let mut p = Rational::from(1);
                        for (pf, _) in &self.chosen {
                            p *= pf;
                        }
                        self.pref_sum += p;
                    }
                    _ => {
                        let mut p = Rational::from(1);
                        for (pf, _) in &self.chosen {
                            p *= pf;
                        }
                        self.best_cost = Some(total);
                        self.pref_sum = p;
                    }
                }
                return Ok(());
            }
            let u = self.order[depth];
            for (w, p, c) in &self.out[u] {
                self.work += 1;
                if self.work > self.work_cap {
                    return Err(Error::Capacity(
                        "arborescence enumeration exceeded its work cap; \
                         use the finite-n engine (finite_chain::stationary)"
                            .into(),
                    ));
                }
                // Cycle check among assigned parents.
                let mut x = *w;
                let mut cyclic = false;
                while x != self.root && self.parent[x] != usize::MAX {
                    x = self.parent[x];
                    if x == u {
                        cyclic = true;
                        break;
                    }
                }
                if cyclic {
                    continue;
                }
                // Admissible cost bound: strictly worse partial solutions die.
                let bound =
                    Rational::from(&self.cost_so_far + c) + &self.suffix[depth + 1];
                if let Some(b) = &self.best_cost {
                    if bound > *b {
                        continue;
                    }
                }
                self.parent[u] = *w;
                self.cost_so_far += c;
                self.chosen.push((p.clone(), c.clone()));
                self.run(depth + 1)?;
                self.chosen.pop();
                self.cost_so_far -= c;
                self.parent[u] = usize::MAX;
            }
            Ok(())
        }
    }

    let mut search = Search {
        order: &order,
        out,
        suffix: &suffix,
        root,
        parent: vec![usize::MAX; v],
        chosen: Vec::new(),
        cost_so_far: Rational::new(),
        best_cost: None,
        pref_sum: Rational::new(),
        work: *work,
        work_cap,
    };
    search.run(0)?;
    *work = search.work;
    Ok(match search.best_cost {
        None => AsymScalar::zero(),
        Some(c) => AsymScalar::term(search.pref_sum, c),
    })
}

/// Exact detailed-balance certificate: `Ok(None)` when π(x)R(x,y) = π(y)R(y,x)
/// in the semiring for every edge, otherwise the first violating edge.
///
/// The stationary asymptotics are enumerated internally with the raised cap
/// used by the tree builder, since reversibility certification is part of the
/// hierarchy pipeline.
pub fn detailed_balance_check(spec: &RateSpec) -> Result<Option<(usize, usize)>> {
    let pi = stationary_asymptotics_capped(spec, 48, ARBORESCENCE_WORK_CAP)?;
    for (x, y, r) in spec.edges() {
        let lhs = semiring_mul(&pi[x], &r);
        let rhs = semiring_mul(&pi[y], &spec.rate(y, x));
        if lhs != rhs {
            return Ok(Some((x, y)));
        }
    }
    Ok(None)
}

/// Widest-path conductance order c_n(A,B): the maximum over self-avoiding
/// paths from A to B of the minimal edge conductance c_n(x,y) = π_n(x)R_n(x,y)
/// along the path, computed in the dominance order (equal-cost bottleneck
/// ties resolve to the larger prefactor).
///
/// This equals the capacity Cap_n(A,B) up to an n-independent constant: the
/// cost component is exact, the prefactor only a bound. Reversible specs only.
pub fn capacity_order(
    spec: &RateSpec,
    pi: &[AsymScalar],
    a: &[usize],
    b: &[usize],
) -> Result<AsymScalar> {
    let v = spec.num_states();
    if pi.len() != v {
        return Err(Error::Domain("capacity_order: π has the wrong length".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("capacity_order: A and B must be non-empty".into()));
    }
    if a.iter().chain(b).any(|&x| x >= v) {
        return Err(Error::Domain("capacity_order: state out of range".into()));
    }
    if a.iter().any(|x| b.contains(x)) {
        return Err(Error::Domain("capacity_order: A and B overlap".into()));
    }
    // Reversibility against the supplied π, edge by edge.
    for (x, y, r) in spec.edges() {
        let lhs = semiring_mul(&pi[x], &r);
        let rhs = semiring_mul(&pi[y], &spec.rate(y, x));
        if lhs != rhs {
            return Err(Error::Unsupported(format!(
                "capacity_order requires a reversible spec; detailed balance fails on \
                 edge ({x}, {y}); use finite_chain::capacity instead"
            )));
        }
    }

    // Conductances per unordered pair. Reversibility with π > 0 forces the
    // support to be symmetric, so scanning x < y covers every pair.
    let mut conductances: Vec<((usize, usize), AsymScalar)> = Vec::new();
    for (x, y, r) in spec.edges() {
        if x < y {
            conductances.push(((x, y), semiring_mul(&pi[x], &r)));
        }
    }
    // Descending dominance order; deterministic tie-break on the pair.
    conductances.sort_by(|l, r| r.1.cmp(&l.1).then_with(|| l.0.cmp(&r.0)));

    // Threshold algorithm: insert edges from widest down until a component
    // contains both an A-state and a B-state; the triggering edge is the
    // optimal bottleneck.
    let mut dsu: Vec<usize> = (0..v).collect();
    fn find(dsu: &mut Vec<usize>, x: usize) -> usize {
        if dsu[x] != x {
            let r = find(dsu, dsu[x]);
            dsu[x] = r;
        }
        dsu[x]
    }
    let mut has_a = vec![false; v];
    let mut has_b = vec![false; v];
    for &x in a {
        has_a[x] = true;
    }
    for &x in b {
        has_b[x] = true;
    }
    for ((x, y), c) in conductances {
        let rx = find(&mut dsu, x);
        let ry = find(&mut dsu, y);
        if rx != ry {
            dsu[rx] = ry;
            has_a[ry] |= has_a[rx];
            has_b[ry] |= has_b[rx];
        }
        let r = find(&mut dsu, x);
        if has_a[r] && has_b[r] {
            return Ok(c);
        }
    }
    Err(Error::Model("capacity_order: A and B are not connected".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(p: i64, c: i64) -> AsymScalar {
        AsymScalar::term(Rational::from(p), Rational::from(c))
    }

    #[test]
    fn dominance_order_is_total() {
        let mut xs = vec![t(1, 2), AsymScalar::zero(), t(3, 0), t(2, 2), t(1, -1)];
        xs.sort();
        assert_eq!(xs, vec![AsymScalar::zero(), t(1, 2), t(2, 2), t(3, 0), t(1, -1)]);
    }

    #[test]
    fn eval_matches_formula() {
        let a = AsymScalar::term(Rational::from(3), Rational::from((1, 2)));
        let v = a.eval(4.0, 96).to_f64();
        assert!((v - 3.0 * (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn add_edge_rejects_bad_input() {
        let mut spec = RateSpec::with_num_states(3);
        assert!(matches!(spec.add_edge(1, 1, t(1, 0)), Err(Error::Domain(_))));
        assert!(matches!(spec.add_edge(0, 7, t(1, 0)), Err(Error::Domain(_))));
        assert!(matches!(spec.add_edge(0, 1, t(1, -2)), Err(Error::Model(_))));
        spec.add_edge(0, 1, t(1, 0)).unwrap();
        assert!(matches!(spec.add_edge(0, 1, t(2, 0)), Err(Error::Domain(_))));
    }

    #[test]
    fn validate_requires_strong_connectivity() {
        let mut spec = RateSpec::with_num_states(2);
        spec.add_edge(0, 1, t(1, 0)).unwrap();
        assert!(matches!(spec.validate(), Err(Error::Model(_))));
        spec.add_edge(1, 0, t(1, 0)).unwrap();
        spec.validate().unwrap();
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(RateSpec::new(vec!["a".into(), "a".into()]).is_err());
    }
}
