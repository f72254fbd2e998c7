//! Implementations of the six subcommands: analysis and DOT export are thin
//! wrappers over the library, the kernel/functional commands add index
//! resolution and table rendering, and `verify` packages the reproducible
//! check suites (kernel convergence, recovery sweeps, identity checks,
//! capacity sandwich, hitting bounds) as CSV sweeps with a pass/fail
//! summary.

use metastab::finite_chain::FiniteChain;
use metastab::gamma_expansion::{
    decompose, gamma_sweep, i0_closed, i0_variational, ip_closed, ip_variational, sweep_to_csv,
    Evaluation, ExtReal, RateExpansion,
};
use metastab::hierarchy::{build_tree, BuildOptions, MetastableTree};
use metastab::rug::Float;
use metastab::scale_algebra::{
    capacity_order, stationary_asymptotics_capped, RateSpec, ARBORESCENCE_WORK_CAP,
};
use metastab::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::output::sig12;
use crate::{CliError, Suite};

/// A loaded model with its fully resolved run options.
pub struct Ctx {
    pub spec: RateSpec,
    pub build: BuildOptions,
    pub tol_decompose: f64,
}

impl Ctx {
    pub fn tree(&self) -> Result<MetastableTree, CliError> {
        build_tree(&self.spec, &self.build).map_err(CliError::Lib)
    }

    /// Resolve a state given as a decimal index or a state name.
    pub fn state(&self, token: &str) -> Result<usize, CliError> {
        if let Ok(i) = token.parse::<usize>() {
            if i < self.spec.num_states() {
                return Ok(i);
            }
            return Err(CliError::Usage(format!(
                "state {i} out of range (the model has {} states)",
                self.spec.num_states()
            )));
        }
        self.spec
            .names()
            .iter()
            .position(|n| n == token)
            .ok_or_else(|| CliError::Usage(format!("unknown state {token:?}")))
    }

    fn label(&self, states: &[usize]) -> String {
        let names: Vec<&str> = states.iter().map(|&x| self.spec.name(x)).collect();
        format!("{{{}}}", names.join(", "))
    }
}

// ------------------------------------------------------------------ kernel

pub fn kernel(
    ctx: &Ctx,
    level: usize,
    time: Option<f64>,
    from: Option<&str>,
    csv: bool,
) -> Result<String, CliError> {
    let tree = ctx.tree()?;
    let top = tree.q + 1;
    match time {
        Some(t) => {
            if level < 1 || level > tree.q {
                return Err(CliError::Usage(format!(
                    "--time applies to the reduced dynamics, levels 1..{}",
                    tree.q
                )));
            }
            if !(t.is_finite() && t >= 0.0) {
                return Err(CliError::Usage("--time must be a finite t ≥ 0".into()));
            }
        }
        None => {
            if level < 1 || level > top {
                return Err(CliError::Usage(format!("--level must be in 1..{top}")));
            }
        }
    }
    let sources: Vec<usize> = match from {
        Some(token) => vec![ctx.state(token)?],
        None => (0..ctx.spec.num_states()).collect(),
    };

    let mut out = String::new();
    if csv {
        out.push_str("from,to,probability\n");
    }
    for &x in &sources {
        let row = match time {
            Some(t) => tree.limiting_kernel_at(level, t, x).map_err(CliError::Lib)?,
            None => tree.limiting_kernel_between(level, x).map_err(CliError::Lib)?,
        };
        if csv {
            for (y, &p) in row.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    ctx.spec.name(x),
                    ctx.spec.name(y),
                    sig12(p)
                ));
            }
        } else if from.is_some() {
            for (y, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    out.push_str(&format!("{}: {}\n", ctx.spec.name(y), sig12(p)));
                }
            }
        } else {
            let entries: Vec<String> = row
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(y, &p)| format!("{}: {}", ctx.spec.name(y), sig12(p)))
                .collect();
            out.push_str(&format!("from {}: {}\n", ctx.spec.name(x), entries.join(", ")));
        }
    }
    Ok(out)
}

// --------------------------------------------------------------------- ldp

fn ext_to_string(value: &ExtReal) -> String {
    match value.value() {
        Some(v) => sig12(v),
        None => "+inf".into(),
    }
}

fn eval_line(eval: &Evaluation) -> String {
    let mut s = ext_to_string(&eval.value);
    if let Some((lo, hi)) = eval.uncertainty {
        s.push_str(&format!("  (uncertainty [{}, {}])", sig12(lo), sig12(hi)));
    }
    s
}

pub fn ldp_measure(ctx: &Ctx, level: usize, mu: &[f64]) -> Result<String, CliError> {
    let tree = ctx.tree()?;
    if level > tree.q {
        return Err(CliError::Usage(format!("functional levels are 0..{}", tree.q)));
    }
    let exp = RateExpansion::new(tree).map_err(CliError::Lib)?;
    let mut out = format!("level {level} functional\n");

    if level == 0 {
        let closed = match i0_closed(&exp, mu) {
            Ok(v) => sig12(v),
            Err(Error::Unsupported(_)) => "unsupported (non-reversible model)".into(),
            Err(e) => return Err(CliError::Lib(e)),
        };
        let variational = i0_variational(&exp, mu).map_err(CliError::Lib)?;
        out.push_str(&format!("closed:      {closed}\n"));
        out.push_str(&format!("variational: {}\n", sig12(variational)));
        return Ok(out);
    }

    match decompose(&exp.tree, level, mu, ctx.tol_decompose) {
        Some(dec) => {
            let level_data = exp.tree.level(level);
            let weights: Vec<String> = dec
                .weights
                .iter()
                .enumerate()
                .map(|(j, &w)| format!("{}: {}", ctx.label(&level_data.wells[j]), sig12(w)))
                .collect();
            out.push_str(&format!(
                "decomposition: ok (residual {})\n",
                sig12(dec.residual)
            ));
            out.push_str(&format!("weights: {}\n", weights.join(", ")));
        }
        None => {
            let mut on_wells = 0.0;
            for well in &exp.tree.level(level).wells {
                for &x in well {
                    on_wells += mu[x];
                }
            }
            let off = (1.0 - on_wells).max(0.0);
            let reason = if off > ctx.tol_decompose {
                format!("mass {} outside the level-{level} wells", sig12(off))
            } else {
                "in-well profile differs from the well measures".to_string()
            };
            out.push_str(&format!(
                "decomposition: failed ({reason}; tol {:e})\n",
                ctx.tol_decompose
            ));
        }
    }

    let closed = match ip_closed(&exp, level, mu) {
        Ok(eval) => eval_line(&eval),
        Err(Error::Unsupported(_)) => "unsupported (non-reversible model)".into(),
        Err(e) => return Err(CliError::Lib(e)),
    };
    let variational = ip_variational(&exp, level, mu).map_err(CliError::Lib)?;
    out.push_str(&format!("closed:      {closed}\n"));
    out.push_str(&format!("variational: {}\n", eval_line(&variational)));
    Ok(out)
}

pub fn ldp_grid(ctx: &Ctx, level: usize, points: usize) -> Result<String, CliError> {
    let tree = ctx.tree()?;
    if level < 1 || level > tree.q {
        return Err(CliError::Usage(format!("--grid applies to levels 1..{}", tree.q)));
    }
    if points < 2 {
        return Err(CliError::Usage("--grid needs at least 2 points".into()));
    }
    let exp = RateExpansion::new(tree).map_err(CliError::Lib)?;
    let measures = &exp.tree.level(level).metastable_measures;
    if measures.len() < 2 {
        return Err(CliError::Usage(format!(
            "level {level} has a single well; the grid sweeps combinations of two"
        )));
    }
    let v = ctx.spec.num_states();
    let mut out = String::from("omega,closed,variational\n");
    for i in 0..points {
        let omega = i as f64 / (points - 1) as f64;
        let mut mu = vec![0.0; v];
        for x in 0..v {
            mu[x] = omega * measures[0][x] + (1.0 - omega) * measures[1][x];
        }
        let closed = match ip_closed(&exp, level, &mu) {
            Ok(eval) => ext_to_string(&eval.value),
            Err(Error::Unsupported(_)) => "unsupported".into(),
            Err(e) => return Err(CliError::Lib(e)),
        };
        let variational = ip_variational(&exp, level, &mu).map_err(CliError::Lib)?;
        out.push_str(&format!(
            "{},{closed},{}\n",
            sig12(omega),
            ext_to_string(&variational.value)
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------- simulate

pub fn simulate(
    ctx: &Ctx,
    n: f64,
    from: &str,
    horizon: f64,
    seed: u64,
    replicas: usize,
) -> Result<String, CliError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(CliError::Usage("--horizon must be a finite t > 0".into()));
    }
    let start = ctx.state(from)?;
    let chain = FiniteChain::instantiate(&ctx.spec, n, ctx.build.precision_bits)
        .map_err(CliError::Lib)?;
    let v = chain.num_states();

    let mut endpoint = vec![0usize; v];
    let mut occupation = vec![0.0f64; v];
    for r in 0..replicas {
        let traj = chain.simulate(start, horizon, seed.wrapping_add(r as u64));
        endpoint[traj.state_at(horizon)] += 1;
        for (x, occ) in traj.occupation_fractions(v).into_iter().enumerate() {
            occupation[x] += occ;
        }
    }

    let mut out =
        String::from("state,name,endpoint_count,endpoint_fraction,endpoint_sigma,mean_occupation\n");
    if replicas == 0 {
        return Ok(out);
    }
    let nf = replicas as f64;
    for x in 0..v {
        let frac = endpoint[x] as f64 / nf;
        let sigma = (frac * (1.0 - frac) / nf).sqrt();
        out.push_str(&format!(
            "{x},{},{},{},{},{}\n",
            ctx.spec.name(x),
            endpoint[x],
            sig12(frac),
            sig12(sigma),
            sig12(occupation[x] / nf)
        ));
    }
    Ok(out)
}

// ------------------------------------------------------------------ verify

/// Run one verification suite: returns (csv, summary line, passed).
pub fn verify(
    ctx: &Ctx,
    suite: Suite,
    ns: Option<Vec<f64>>,
    level: usize,
) -> Result<(String, String, bool), CliError> {
    match suite {
        Suite::KernelConvergence => {
            verify_kernel(ctx, ns.unwrap_or_else(|| vec![8.0, 10.0, 12.0, 14.0]))
        }
        Suite::GammaLimsup => {
            verify_gamma(ctx, ns.unwrap_or_else(|| vec![10.0, 14.0, 18.0]), level)
        }
        Suite::AppendixIdentities => verify_identities(ctx, ns.unwrap_or_else(|| vec![12.0])),
        Suite::CapacitySandwich => verify_capacity(ctx, ns.unwrap_or_else(|| vec![10.0, 20.0])),
        Suite::HittingBound => verify_hitting(ctx, ns.unwrap_or_else(|| vec![8.0])),
    }
}

/// Geometric-mean observation window between consecutive scales; above the
/// top scale the window opens another e^{n/2}.
fn window(tree: &MetastableTree, p: usize, n: f64, prec: u32) -> Result<f64, CliError> {
    let th = |q: usize| -> Result<f64, CliError> {
        Ok(tree
            .theta_at(q, n, prec)
            .map_err(CliError::Lib)?
            .expect("scales below the top are finite")
            .to_f64())
    };
    if p <= tree.q {
        Ok((th(p - 1)? * th(p)?).sqrt())
    } else {
        Ok(th(tree.q)? * (0.5 * n).exp())
    }
}

fn verify_kernel(ctx: &Ctx, ns: Vec<f64>) -> Result<(String, String, bool), CliError> {
    let tree = ctx.tree()?;
    let prec = ctx.build.precision_bits;
    let v = ctx.spec.num_states();
    let mut csv = String::from("n,level,max_tv\n");
    let mut pass = true;
    let mut worst_final = 0.0f64;
    for p in 1..=tree.q + 1 {
        let mut prev = f64::INFINITY;
        let mut last = f64::INFINITY;
        for &n in &ns {
            let chain =
                FiniteChain::instantiate(&ctx.spec, n, prec).map_err(CliError::Lib)?;
            let beta = window(&tree, p, n, prec)?;
            let kernel = chain.transition_kernel(beta).map_err(CliError::Lib)?;
            let mut max_tv = 0.0f64;
            for x in 0..v {
                let target = tree.limiting_kernel_between(p, x).map_err(CliError::Lib)?;
                let tv: f64 = (0..v).map(|y| (kernel[x][y].to_f64() - target[y]).abs()).sum();
                max_tv = max_tv.max(0.5 * tv);
            }
            csv.push_str(&format!("{n},{p},{}\n", sig12(max_tv)));
            if max_tv >= prev {
                pass = false;
            }
            prev = max_tv;
            last = max_tv;
        }
        if !(last < 0.02) {
            pass = false;
        }
        worst_final = worst_final.max(last);
    }
    let summary = format!(
        "suite kernel-convergence: {} (levels 1..{}, n = {ns:?}, worst final TV {})",
        if pass { "PASS" } else { "FAIL" },
        tree.q + 1,
        sig12(worst_final)
    );
    Ok((csv, summary, pass))
}

fn verify_gamma(ctx: &Ctx, ns: Vec<f64>, level: usize) -> Result<(String, String, bool), CliError> {
    let tree = ctx.tree()?;
    if level < 1 || level > tree.q {
        return Err(CliError::Usage(format!(
            "gamma-limsup sweeps levels 1..{}",
            tree.q
        )));
    }
    if ns.len() < 2 {
        return Err(CliError::Usage("gamma-limsup needs at least two n values".into()));
    }
    let exp = RateExpansion::new(tree).map_err(CliError::Lib)?;
    let mu = exp.tree.level(level).metastable_measures[0].clone();
    let rows = gamma_sweep(&exp, level, &mu, &ns).map_err(CliError::Lib)?;
    let csv = sweep_to_csv(&rows);
    let mut pass = true;
    for k in 1..rows.len() {
        if rows[k].abs_err >= rows[k - 1].abs_err {
            pass = false;
        }
    }
    let target = rows[0].target;
    let final_err = rows.last().expect("sweep is non-empty").abs_err;
    if target > 0.0 {
        pass = pass && final_err / target < 0.10;
    } else {
        pass = pass && final_err <= 1e-8;
    }
    let summary = format!(
        "suite gamma-limsup (level {level}): {} (target {}, final |error| {})",
        if pass { "PASS" } else { "FAIL" },
        sig12(target),
        sig12(final_err)
    );
    Ok((csv, summary, pass))
}

fn verify_identities(ctx: &Ctx, ns: Vec<f64>) -> Result<(String, String, bool), CliError> {
    let v = ctx.spec.num_states();
    if v < 4 {
        return Err(CliError::Usage("the identity suite needs at least 4 states".into()));
    }
    let prec = ctx.build.precision_bits;
    let tol = 1e-20;
    let mut rng = ChaCha12Rng::seed_from_u64(7711);
    let mut csv = String::from("n,draw,check,rel_dev\n");
    let mut pass = true;
    let mut worst = 0.0f64;
    let f = |x: f64| Float::with_val(prec, x);
    let rel = |a: &Float, b: &Float| -> f64 {
        let scale = a.clone().abs().max(&b.clone().abs());
        if scale == 0 {
            return 0.0;
        }
        (Float::with_val(prec, a - b).abs() / scale).to_f64()
    };

    for &n in &ns {
        let chain = FiniteChain::instantiate(&ctx.spec, n, prec).map_err(CliError::Lib)?;
        let pi = chain.stationary().map_err(CliError::Lib)?;
        for draw in 0..6usize {
            // Random boundary pair, superset to trace on, boundary data.
            let a = rng.random_range(0..v);
            let b = loop {
                let b = rng.random_range(0..v);
                if b != a {
                    break b;
                }
            };
            let v0 = if a < b { vec![a, b] } else { vec![b, a] };
            let size = rng.random_range(3..=(v - 1).min(6));
            let mut w = v0.clone();
            let mut rest: Vec<usize> = (0..v).filter(|x| !v0.contains(x)).collect();
            for i in 0..rest.len() {
                let j = rng.random_range(i..rest.len());
                rest.swap(i, j);
            }
            w.extend(rest.into_iter().take(size - v0.len()));
            w.sort_unstable();
            let g = vec![f(rng.random_range(0.1..3.0)), f(rng.random_range(0.1..3.0))];

            let u = chain.poisson_solve(&v0, &g).map_err(CliError::Lib)?;
            let tr = chain.trace_rates(&w).map_err(CliError::Lib)?;
            let u_w: Vec<Float> = w.iter().map(|&x| u[x].clone()).collect();
            let mut mass = f(0.0);
            for &x in &w {
                mass += &pi[x];
            }

            // Full vs traced generator on the harmonic extension.
            let mut dev_gen = 0.0f64;
            for (i, &x) in w.iter().enumerate() {
                if !v0.contains(&x) {
                    continue;
                }
                let mut full = f(0.0);
                for y in 0..v {
                    if y != x {
                        full += Float::with_val(
                            prec,
                            &chain.rate(x, y) * &Float::with_val(prec, &u[y] - &u[x]),
                        );
                    }
                }
                let mut traced = f(0.0);
                for j in 0..w.len() {
                    if j != i {
                        traced += Float::with_val(
                            prec,
                            &tr.rate(i, j) * &Float::with_val(prec, &u_w[j] - &u_w[i]),
                        );
                    }
                }
                dev_gen = dev_gen.max(rel(&full, &traced));
            }

            // Dirichlet form restriction to the trace chain.
            let d_full = chain.dirichlet_form(&u).map_err(CliError::Lib)?;
            let d_trace = tr.dirichlet_form(&u_w).map_err(CliError::Lib)?;
            let dev_dir = rel(&d_full, &Float::with_val(prec, &mass * &d_trace));

            // Capacity as the equilibrium potential's Dirichlet form.
            let h = chain
                .poisson_solve(&v0, &[f(1.0), f(0.0)])
                .map_err(CliError::Lib)?;
            let d_h = chain.dirichlet_form(&h).map_err(CliError::Lib)?;
            let cap = chain.capacity(&[v0[0]], &[v0[1]]).map_err(CliError::Lib)?;
            let dev_cap = rel(&d_h, &cap);

            // Trace stationarity.
            let pi_w = tr.stationary().map_err(CliError::Lib)?;
            let mut dev_tr = 0.0f64;
            for (i, &x) in w.iter().enumerate() {
                let cond = Float::with_val(prec, &pi[x] / &mass);
                dev_tr = dev_tr.max(rel(&pi_w[i], &cond));
            }

            for (check, dev) in [
                ("generator", dev_gen),
                ("dirichlet-restriction", dev_dir),
                ("capacity", dev_cap),
                ("trace-stationarity", dev_tr),
            ] {
                csv.push_str(&format!("{n},{draw},{check},{}\n", sig12(dev)));
                pass = pass && dev < tol;
                worst = worst.max(dev);
            }
        }
    }
    let summary = format!(
        "suite appendix-identities: {} (worst relative deviation {}, tol {tol:e})",
        if pass { "PASS" } else { "FAIL" },
        sig12(worst)
    );
    Ok((csv, summary, pass))
}

fn verify_capacity(ctx: &Ctx, ns: Vec<f64>) -> Result<(String, String, bool), CliError> {
    if ns.len() < 2 || ns.last() <= ns.first() {
        return Err(CliError::Usage(
            "capacity-sandwich needs an increasing n list with at least two values".into(),
        ));
    }
    let prec = ctx.build.precision_bits;
    let v = ctx.spec.num_states();
    let bound = (v * v) as f64;
    let pi = stationary_asymptotics_capped(&ctx.spec, 48, ARBORESCENCE_WORK_CAP)
        .map_err(CliError::Lib)?;
    let chains: Vec<(f64, FiniteChain)> = ns
        .iter()
        .map(|&n| Ok((n, FiniteChain::instantiate(&ctx.spec, n, prec).map_err(CliError::Lib)?)))
        .collect::<Result<_, CliError>>()?;
    let span = ns.last().unwrap() - ns.first().unwrap();

    let mut rng = ChaCha12Rng::seed_from_u64(7723);
    let mut csv = String::from("a,b,n,capacity,ratio_to_order,fitted_cost,order_cost\n");
    let mut pass = true;
    let mut worst_ratio = 1.0f64;
    for _ in 0..10 {
        let a = rng.random_range(0..v);
        let b = loop {
            let b = rng.random_range(0..v);
            if b != a {
                break b;
            }
        };
        let order = capacity_order(&ctx.spec, &pi, &[a], &[b]).map_err(CliError::Lib)?;
        let cost = order.cost().expect("capacities are nonzero").to_f64();
        let pref = order.prefactor().expect("capacities are nonzero").to_f64();

        let mut caps = Vec::new();
        for (n, chain) in &chains {
            let cap = chain.capacity(&[a], &[b]).map_err(CliError::Lib)?;
            let order_val = Float::with_val(prec, -cost * n).exp() * pref;
            let ratio = Float::with_val(prec, &cap / &order_val).to_f64();
            caps.push((*n, cap, ratio));
        }
        let fitted = Float::with_val(prec, &caps.first().unwrap().1 / &caps.last().unwrap().1)
            .ln()
            .to_f64()
            / span;
        for (n, cap, ratio) in &caps {
            csv.push_str(&format!(
                "{},{},{n},{},{},{},{}\n",
                ctx.spec.name(a),
                ctx.spec.name(b),
                sig12(cap.to_f64()),
                sig12(*ratio),
                sig12(fitted),
                sig12(cost)
            ));
            if !(*ratio >= 1.0 / bound && *ratio <= bound) {
                pass = false;
            }
            worst_ratio = worst_ratio.max(ratio.max(1.0 / ratio));
        }
        if (fitted - cost).abs() > 0.05 {
            pass = false;
        }
    }
    let summary = format!(
        "suite capacity-sandwich: {} (10 pairs, ratio bound {bound}, worst ratio factor {})",
        if pass { "PASS" } else { "FAIL" },
        sig12(worst_ratio)
    );
    Ok((csv, summary, pass))
}

fn verify_hitting(ctx: &Ctx, ns: Vec<f64>) -> Result<(String, String, bool), CliError> {
    let prec = ctx.build.precision_bits;
    let v = ctx.spec.num_states();
    let mut rng = ChaCha12Rng::seed_from_u64(7731);
    let mut csv = String::from("n,instance,from,targets,rho,holds\n");
    let mut pass = true;
    let mut held = 0usize;
    let mut total = 0usize;
    for &n in &ns {
        let chain = FiniteChain::instantiate(&ctx.spec, n, prec).map_err(CliError::Lib)?;
        for instance in 0..20usize {
            let x = rng.random_range(0..v);
            let nb = rng.random_range(1..=2usize.min(v - 1));
            let mut b = Vec::new();
            while b.len() < nb {
                let y = rng.random_range(0..v);
                if y != x && !b.contains(&y) {
                    b.push(y);
                }
            }
            b.sort_unstable();
            let rho = rng.random_range(-4.0..6.0f64).exp();
            let holds = chain.hitting_time_bound_check(&[x], &b, rho).map_err(CliError::Lib)?;
            let targets: Vec<&str> = b.iter().map(|&y| ctx.spec.name(y)).collect();
            csv.push_str(&format!(
                "{n},{instance},{},{},{},{holds}\n",
                ctx.spec.name(x),
                targets.join("|"),
                sig12(rho)
            ));
            pass = pass && holds;
            held += holds as usize;
            total += 1;
        }
    }
    let summary = format!(
        "suite hitting-bound: {} ({held}/{total} instances)",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok((csv, summary, pass))
}
