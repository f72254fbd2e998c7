//! The structured analysis report: a versioned, serializable snapshot of a
//! built hierarchy — limit-chain classes, levels with wells, scales and
//! reduced rates (with their probe uncertainty), metastable measures, and
//! absorption matrices. The JSON form round-trips losslessly; the text form
//! prints every number to a fixed significant-digit budget.

use metastab::hierarchy::MetastableTree;
use serde::{Deserialize, Serialize};

use crate::output::sig12;

pub const REPORT_SCHEMA: &str = "metastab-report/1";
pub const PRINTED_DIGITS: u32 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema: String,
    /// Significant digits used by the textual renderings of this report.
    pub printed_digits: u32,
    pub precision_bits: u32,
    pub probes: (f64, f64),
    pub num_states: usize,
    pub state_names: Vec<String>,
    pub limit: LimitReport,
    /// Number of non-trivial scales; the hierarchy has q+1 levels.
    pub q: usize,
    /// True when every branching decision came from numeric fitting alone.
    pub numerically_inferred: bool,
    pub levels: Vec<LevelReport>,
    /// `absorption[p-1][x][j]`: probability that, from state x, the scale-p
    /// dynamics starts in the level-p well j.
    pub absorption: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitReport {
    pub closed_classes: Vec<Vec<usize>>,
    pub transient_classes: Vec<Vec<usize>>,
    pub free_states: Vec<usize>,
    /// Order-one edges as (source, target, exact rational prefactor).
    pub surviving_edges: Vec<(usize, usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaReport {
    /// Fitted prefactor of the escape scale.
    pub prefactor: f64,
    /// Exact rational growth exponent g: the scale grows like e^(g·n).
    pub growth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelReport {
    pub p: usize,
    pub wells: Vec<Vec<usize>>,
    /// States outside every level-p well.
    pub delta: Vec<usize>,
    /// Escape scale; absent at the top level.
    pub theta: Option<ThetaReport>,
    /// Reduced jump rates between wells on the escape scale.
    pub rates: Vec<Vec<f64>>,
    /// Relative disagreement of each positive rate between the two probes.
    pub rate_spread: Vec<Vec<f64>>,
    /// Whether each well's escape happens at exactly this scale.
    pub matched_escape: Vec<bool>,
    /// Recurrent classes of the reduced chain (the next level's wells).
    pub recurrent_classes: Vec<Vec<usize>>,
    /// Wells that the reduced chain eventually abandons.
    pub transient_wells: Vec<usize>,
    /// Limit of the stationary measure conditioned to each well.
    pub metastable_measures: Vec<Vec<f64>>,
}

impl Report {
    pub fn from_tree(tree: &MetastableTree) -> Report {
        let spec = &tree.spec;
        let limit = LimitReport {
            closed_classes: tree.limit.closed_classes.clone(),
            transient_classes: tree.limit.transient_classes.clone(),
            free_states: tree.limit.delta.clone(),
            surviving_edges: tree
                .limit
                .surviving_edges
                .iter()
                .map(|(x, y, pref)| (*x, *y, pref.to_string()))
                .collect(),
        };
        let levels = tree
            .levels
            .iter()
            .map(|level| LevelReport {
                p: level.p,
                wells: level.wells.clone(),
                delta: level.delta_p.clone(),
                theta: level.theta_order.as_ref().map(|ord| ThetaReport {
                    prefactor: ord.prefactor().expect("scales are nonzero").to_f64(),
                    growth: (-ord.cost().expect("scales are nonzero").clone()).to_string(),
                }),
                rates: level.reduced_rates.clone(),
                rate_spread: level.rate_spread.clone(),
                matched_escape: level.matched_escape.clone(),
                recurrent_classes: level.recurrent_classes.clone(),
                transient_wells: level.transient_indices.clone(),
                metastable_measures: level.metastable_measures.clone(),
            })
            .collect();
        Report {
            schema: REPORT_SCHEMA.into(),
            printed_digits: PRINTED_DIGITS,
            precision_bits: tree.options.precision_bits,
            probes: tree.options.probes,
            num_states: spec.num_states(),
            state_names: spec.names().to_vec(),
            limit,
            q: tree.q,
            numerically_inferred: tree.numerically_inferred,
            levels,
            absorption: tree.absorption.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Human-readable rendering; every number carries `printed_digits`
    /// significant digits.
    pub fn to_text(&self) -> String {
        let name = |x: usize| self.state_names[x].as_str();
        let set = |xs: &[usize]| -> String {
            let names: Vec<&str> = xs.iter().map(|&x| name(x)).collect();
            format!("{{{}}}", names.join(", "))
        };
        let mut out = String::new();
        out.push_str(&format!("metastab report ({})\n", self.schema));
        out.push_str(&format!(
            "precision: {} bits; probes n = {} and {}; values to {} significant digits\n",
            self.precision_bits, self.probes.0, self.probes.1, self.printed_digits
        ));
        if self.numerically_inferred {
            out.push_str("note: branchings inferred numerically (no exact order arithmetic)\n");
        }
        out.push_str(&format!("model: {} states\n", self.num_states));
        out.push_str(&format!(
            "limit chain: {} closed classes, {} transient classes, {} free states\n",
            self.limit.closed_classes.len(),
            self.limit.transient_classes.len(),
            self.limit.free_states.len()
        ));
        for class in &self.limit.closed_classes {
            out.push_str(&format!("  closed {}\n", set(class)));
        }
        for class in &self.limit.transient_classes {
            out.push_str(&format!("  transient {}\n", set(class)));
        }
        out.push_str(&format!("\nhierarchy: q = {} ({} levels)\n", self.q, self.levels.len()));

        for level in &self.levels {
            let p = level.p;
            out.push('\n');
            match &level.theta {
                Some(theta) => out.push_str(&format!(
                    "level {p}: {} wells, escape scale θ ≈ {} · e^({}·n)\n",
                    level.wells.len(),
                    sig12(theta.prefactor),
                    theta.growth
                )),
                None => out.push_str(&format!(
                    "level {p}: {} wells, no escape (top of the hierarchy)\n",
                    level.wells.len()
                )),
            }
            let wells: Vec<String> = level.wells.iter().map(|w| set(w)).collect();
            out.push_str(&format!("  wells: {}\n", wells.join(" ")));
            out.push_str(&format!("  outside mass Δ{p}: {} states\n", level.delta.len()));

            let mut any_rate = false;
            for (i, row) in level.rates.iter().enumerate() {
                for (j, &r) in row.iter().enumerate() {
                    if r > 0.0 {
                        any_rate = true;
                        out.push_str(&format!(
                            "  r({} → {}) = {}  (probe spread {})\n",
                            set(&level.wells[i]),
                            set(&level.wells[j]),
                            sig12(r),
                            sig12(level.rate_spread[i][j])
                        ));
                    }
                }
            }
            if !any_rate {
                out.push_str("  no reduced jumps at this scale\n");
            }
            if !level.recurrent_classes.is_empty() && p < self.levels.len() {
                let classes: Vec<String> = level
                    .recurrent_classes
                    .iter()
                    .map(|class| {
                        let members: Vec<String> =
                            class.iter().map(|&j| set(&level.wells[j])).collect();
                        members.join("∪")
                    })
                    .collect();
                out.push_str(&format!("  recurrent classes: {}\n", classes.join(" ")));
                if !level.transient_wells.is_empty() {
                    let ts: Vec<String> =
                        level.transient_wells.iter().map(|&j| set(&level.wells[j])).collect();
                    out.push_str(&format!("  transient wells: {}\n", ts.join(" ")));
                }
            }
            for (j, mu) in level.metastable_measures.iter().enumerate() {
                let entries: Vec<String> = mu
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m > 0.0)
                    .map(|(x, &m)| format!("{}: {}", name(x), sig12(m)))
                    .collect();
                out.push_str(&format!(
                    "  π{} = {{{}}}\n",
                    set(&level.wells[j]),
                    entries.join(", ")
                ));
            }
        }

        for (k, matrix) in self.absorption.iter().enumerate() {
            let p = k + 1;
            out.push_str(&format!("\nabsorption into level-{p} wells:\n"));
            for (x, row) in matrix.iter().enumerate() {
                let entries: Vec<String> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a > 0.0)
                    .map(|(j, &a)| {
                        format!("{}: {}", set(&self.levels[p - 1].wells[j]), sig12(a))
                    })
                    .collect();
                out.push_str(&format!("  {} → {}\n", name(x), entries.join(", ")));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use metastab::hierarchy::{build_tree, BuildOptions};
    use metastab::models;

    #[test]
    fn report_round_trips_losslessly_through_json() {
        let spec = models::landscape_spec(&[0.0, -1.0, 0.5, -2.0, 0.0, -1.0, 1.0]).unwrap();
        let tree = build_tree(&spec, &BuildOptions::default()).unwrap();
        let report = Report::from_tree(&tree);
        let json = report.to_json();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn text_rendering_mentions_the_scales() {
        let tree =
            build_tree(&models::fig1_spec(), &BuildOptions::default()).unwrap();
        let report = Report::from_tree(&tree);
        let text = report.to_text();
        assert!(text.contains("q = 3"));
        assert!(text.contains("e^(1·n)"));
        assert!(text.contains("e^(4·n)"));
        assert!(text.contains("x9"));
    }
}
