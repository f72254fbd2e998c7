//! On-disk model format: a versioned JSON document that either lists states
//! and directed edges (source, target, prefactor, cost) or gives an energy
//! landscape shortcut, plus optional run options. Unknown fields are
//! rejected so typos fail loudly instead of being ignored.

use std::path::Path;

use metastab::models;
use metastab::rug::Rational;
use metastab::scale_algebra::{AsymScalar, RateSpec};
use serde::Deserialize;

use crate::CliError;

pub const SPEC_SCHEMA: &str = "metastab-spec/1";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub schema: String,
    /// State names; requires `edges`.
    #[serde(default)]
    pub states: Option<Vec<String>>,
    /// Directed edges as (source, target, prefactor, cost). The rate of the
    /// edge is prefactor · e^(−cost·n).
    #[serde(default)]
    pub edges: Option<Vec<(usize, usize, Ratio, Ratio)>>,
    /// Shortcut: a nearest-neighbor landscape model from an energy vector,
    /// mutually exclusive with `states`/`edges`.
    #[serde(default)]
    pub landscape: Option<Vec<f64>>,
    #[serde(default)]
    pub options: Option<FileOptions>,
}

/// A rational number written either as a plain JSON number (read exactly as
/// the binary double it parses to) or as an exact pair [numerator,
/// denominator].
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum Ratio {
    Number(f64),
    Fraction(i64, i64),
}

impl Ratio {
    fn to_rational(self) -> Result<Rational, CliError> {
        match self {
            Ratio::Number(x) => Rational::from_f64(x)
                .ok_or_else(|| CliError::Parse(format!("non-finite number {x} in spec"))),
            Ratio::Fraction(num, den) => {
                if den == 0 {
                    return Err(CliError::Parse("zero denominator in spec".into()));
                }
                Ok(Rational::from((num, den)))
            }
        }
    }
}

/// Run options carried inside the spec file; command-line flags override
/// them, and built-in defaults fill whatever remains.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileOptions {
    /// Probe values n₁ < n₂ for the two-probe limit classification.
    #[serde(default)]
    pub probes: Option<(f64, f64)>,
    /// Working precision in bits.
    #[serde(default)]
    pub precision: Option<u32>,
    /// Fitted-cost threshold below which a scaled rate counts as order one.
    #[serde(default)]
    pub tol_cost: Option<f64>,
    /// Maximum relative disagreement between the two probe evaluations.
    #[serde(default)]
    pub tol_probe: Option<f64>,
    /// Measure-decomposition tolerance for the rate functionals.
    #[serde(default)]
    pub tol_decompose: Option<f64>,
}

/// Read and validate a spec file, returning the model and its file-level
/// run options. Every failure here is a parse-level error.
pub fn load(path: &Path) -> Result<(RateSpec, FileOptions), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let file: SpecFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    if file.schema != SPEC_SCHEMA {
        return Err(CliError::Parse(format!(
            "unsupported schema {:?} (expected {SPEC_SCHEMA:?})",
            file.schema
        )));
    }
    let options = file.options.clone().unwrap_or_default();
    if let Some((n1, n2)) = options.probes {
        if !(n1.is_finite() && n2.is_finite() && 0.0 <= n1 && n1 < n2) {
            return Err(CliError::Parse(format!("probes must satisfy 0 ≤ n₁ < n₂, got {n1}, {n2}")));
        }
    }

    let spec = match (&file.landscape, &file.states, &file.edges) {
        (Some(energies), None, None) => models::landscape_spec(energies)
            .map_err(|e| CliError::Parse(format!("landscape: {e}")))?,
        (None, Some(states), Some(edges)) => {
            let mut spec = RateSpec::new(states.clone())
                .map_err(|e| CliError::Parse(format!("states: {e}")))?;
            for &(from, to, pref, cost) in edges {
                let rate = AsymScalar::term(pref.to_rational()?, cost.to_rational()?);
                spec.add_edge(from, to, rate)
                    .map_err(|e| CliError::Parse(format!("edge {from} → {to}: {e}")))?;
            }
            spec
        }
        (Some(_), _, _) => {
            return Err(CliError::Parse(
                "the landscape shortcut excludes explicit states/edges".into(),
            ))
        }
        _ => {
            return Err(CliError::Parse(
                "a spec needs either a landscape or both states and edges".into(),
            ))
        }
    };
    Ok((spec, options))
}

/// Read a probability vector (a JSON array of state weights).
pub fn load_measure(path: &Path, num_states: usize) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let mu: Vec<f64> = serde_json::from_str(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    if mu.len() != num_states {
        return Err(CliError::Parse(format!(
            "measure has {} entries, the model has {num_states} states",
            mu.len()
        )));
    }
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_edges_parse_with_exact_fractions() {
        let dir = std::env::temp_dir().join("metastab-specfile-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pair.json");
        std::fs::write(
            &path,
            r#"{
              "schema": "metastab-spec/1",
              "states": ["a", "b"],
              "edges": [[0, 1, [3, 2], 0], [1, 0, 1, [1, 4]]]
            }"#,
        )
        .unwrap();
        let (spec, _) = load(&path).unwrap();
        assert_eq!(spec.num_states(), 2);
        let edges: Vec<_> = spec.edges().collect();
        assert_eq!(edges.len(), 2);
        assert_eq!(*edges[0].2.prefactor().unwrap(), Rational::from((3, 2)));
        assert_eq!(*edges[1].2.cost().unwrap(), Rational::from((1, 4)));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = std::env::temp_dir().join("metastab-specfile-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("unknown.json");
        std::fs::write(
            &path,
            r#"{"schema": "metastab-spec/1", "landscape": [0.0, -1.0, 0.0], "typo": 1}"#,
        )
        .unwrap();
        assert!(matches!(load(&path), Err(CliError::Parse(_))));
    }
}
