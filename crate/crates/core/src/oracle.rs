//! Independent checks: closed-form bounds, direct constraint evaluation and a
//! single full-margin baseline program.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{build_model, query_objective, Constraint};
use crate::error::{Error, Result};
use crate::lp::{Bounder, BoundsResult};
use crate::model::{Assignment, MarginSpec, ModelSpec, Query, RegimeTable, VariableId};

/// Classical no-assumption bounds on `P(B=1 | do(A=x))` from an observational
/// table over `(A, B) = (X1, X2)`.
pub fn manski_bounds(table: &RegimeTable, x: u8) -> Result<(f64, f64)> {
    if table.n_vars() != 2 || !table.regime.is_observational() || x > 1 {
        return Err(Error::InvalidQuery(
            "closed-form bounds need an observational two-variable table and a binary value".into(),
        ));
    }
    let (a, b) = (VariableId(0), VariableId(1));
    let joint = table.marginal(&Assignment::new([(a, x), (b, 1)])?);
    let other_arm = table.marginal(&Assignment::new([(a, 1 - x)])?);
    Ok((joint, joint + other_arm))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagViolation {
    pub tag: String,
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub passed: bool,
    pub tolerance: f64,
    pub constraints_checked: usize,
    pub max_violation: f64,
    pub worst_tag: Option<String>,
    /// Constraints violated by more than the tolerance, worst first.
    pub violations: Vec<TagViolation>,
}

impl CertificateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluates every constraint at `theta` by direct summation.
pub fn check_certificate(theta: &[f64], constraints: &[Constraint], tol: f64) -> Result<CertificateReport> {
    if let Some(i) = constraints.iter().filter_map(|c| c.expr.max_index()).max() {
        if i >= theta.len() {
            return Err(Error::InvalidModel(format!(
                "certificate has {} coordinates but constraints reference index {i}",
                theta.len()
            )));
        }
    }
    let values: Vec<f64> = constraints.par_iter().map(|c| c.violation(theta)).collect();
    let mut max_violation = 0.0;
    let mut worst_tag = None;
    for (c, &v) in constraints.iter().zip(&values) {
        if v > max_violation || v.is_nan() {
            max_violation = if v.is_nan() { f64::INFINITY } else { v };
            worst_tag = Some(c.tag.clone());
        }
    }
    let mut violations: Vec<TagViolation> = constraints
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v > tol || v.is_nan())
        .map(|(c, &v)| TagViolation {
            tag: c.tag.clone(),
            violation: v,
        })
        .collect();
    violations.sort_by(|a, b| b.violation.total_cmp(&a.violation));
    Ok(CertificateReport {
        passed: max_violation <= tol,
        tolerance: tol,
        constraints_checked: constraints.len(),
        max_violation,
        worst_tag,
        violations,
    })
}

/// Largest variable count for which one margin over everything is enumerable.
pub const MAX_BASELINE_VARS: usize = 4;

/// Single margin over all variables, bound with every table and nothing else.
pub fn full_margin_baseline(n_vars: usize, tables: &[RegimeTable], query: &Query) -> Result<BoundsResult> {
    if n_vars > MAX_BASELINE_VARS {
        return Err(Error::TooLarge(format!(
            "a full margin over {n_vars} variables needs 2^{} parameters",
            (1u64 << n_vars) - 1
        )));
    }
    let mut query = query.clone();
    query.margin_id = None;
    let spec = ModelSpec {
        n_vars,
        margins: vec![MarginSpec::new(1, 0..n_vars)],
        coherence_pairs: vec![],
        weak_edges: vec![],
        regimes_available: tables.iter().map(|t| t.regime.clone()).collect(),
    };
    let built = build_model(&spec, tables)?;
    let (objective, _) = query_objective(&built, tables, &query)?;
    let lp = built.program(objective);
    Bounder::new(&lp)?.bound(&lp.objective, Some(query.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{LinExpr, Relation};
    use crate::model::{Provenance, Regime};

    fn table2(p_a1: f64, p_b1_a1: f64, p_b1_a0: f64) -> RegimeTable {
        // index = a + 2b
        let p00 = (1.0 - p_a1) * (1.0 - p_b1_a0);
        let p10 = p_a1 * (1.0 - p_b1_a1);
        let p01 = (1.0 - p_a1) * p_b1_a0;
        let p11 = p_a1 * p_b1_a1;
        RegimeTable {
            regime: Regime::observational(),
            probs: vec![p00, p10, p01, p11],
            provenance: Provenance::Exact,
        }
    }

    #[test]
    fn manski_reference_values() {
        let t = table2(0.5, 0.8, 0.4);
        let (lo, hi) = manski_bounds(&t, 1).unwrap();
        assert!((lo - 0.4).abs() < 1e-12 && (hi - 0.9).abs() < 1e-12);
        let (lo, hi) = manski_bounds(&t, 0).unwrap();
        assert!((lo - 0.2).abs() < 1e-12 && (hi - 0.7).abs() < 1e-12);
        let det = table2(1.0, 0.3, 0.9);
        let (lo, hi) = manski_bounds(&det, 1).unwrap();
        assert!((lo - 0.3).abs() < 1e-12 && (hi - lo).abs() < 1e-12);
    }

    #[test]
    fn baseline_matches_closed_form_for_two_variables() {
        let t = table2(0.35, 0.7, 0.2);
        for x in 0..2 {
            let q = Query::prob(1, 1, Regime::new([(VariableId(0), x)]).unwrap());
            let b = full_margin_baseline(2, std::slice::from_ref(&t), &q).unwrap();
            let (lo, hi) = manski_bounds(&t, x).unwrap();
            assert!((b.lower - lo).abs() < 1e-9 && (b.upper - hi).abs() < 1e-9, "{b:?} vs {lo} {hi}");
        }
    }

    #[test]
    fn baseline_refuses_large_models() {
        let q = Query::prob(5, 1, Regime::observational());
        assert!(matches!(full_margin_baseline(6, &[], &q), Err(Error::TooLarge(_))));
        assert!(matches!(full_margin_baseline(5, &[], &q), Err(Error::TooLarge(_))));
    }

    #[test]
    fn uniform_theta_against_skewed_binding() {
        // one margin {X1}: θ = (0.5, 0.5), data says P(X1=1) = 0.8
        let c = Constraint::eq(LinExpr::new(vec![(1, 1.0)], -0.8), "binding".into());
        let r = check_certificate(&[0.5, 0.5], &[c], 1e-9).unwrap();
        assert!((r.max_violation - 0.3).abs() < 1e-12);
        assert_eq!(r.worst_tag.as_deref(), Some("binding"));
        assert!(!r.passed);
    }

    #[test]
    fn negative_coordinate_is_reported() {
        let cs = vec![
            Constraint::eq(LinExpr::new(vec![(0, 1.0), (1, 1.0)], -1.0), "simplex:M1".into()),
            Constraint::le(LinExpr::new(vec![(1, -1.0)], 0.0), "nonneg:M1:t0_1".into()),
        ];
        let r = check_certificate(&[1.2, -0.2], &cs, 1e-9).unwrap();
        assert_eq!(r.worst_tag.as_deref(), Some("nonneg:M1:t0_1"));
        assert_eq!(r.violations.len(), 1);
        assert!(cs[1].relation == Relation::Le);
        assert!(check_certificate(&[0.0], &cs, 1e-9).is_err());
    }
}
