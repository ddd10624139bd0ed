//! Feasibility check with a greedy localization of contradictory constraints.

use serde::{Deserialize, Serialize};

use crate::constraints::{tag_group, BuiltModel, Constraint, LinExpr, LinearProgram, Skipped};
use crate::error::Result;
use crate::lp::Bounder;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub feasible: bool,
    pub phase_one_value: f64,
    /// Tag groups that stay infeasible together but not after dropping any
    /// one of them.
    pub irreducible_groups: Vec<String>,
    /// The assumption groups among the irreducible ones, or every
    /// irreducible group when only data constraints remain.
    pub blamed: Vec<String>,
    pub skipped: Vec<Skipped>,
    pub lp_solves: usize,
}

/// Deletion order: data first, so the surviving set keeps the assumptions.
fn group_rank(group: &str) -> u8 {
    match group.split(':').next().unwrap_or("") {
        "simplex" => 0,
        "binding" => 1,
        "coherence" => 2,
        _ => 3,
    }
}

fn is_assumption(group: &str) -> bool {
    group_rank(group) >= 2
}

fn feasible_with(n_vars: usize, rows: &[&Constraint]) -> Result<(bool, f64)> {
    let mut lp = LinearProgram::new(n_vars, LinExpr::default());
    lp.add_constraints(rows.iter().map(|c| (*c).clone()));
    let b = Bounder::new(&lp)?;
    Ok((b.is_feasible(), b.phase_one_value()))
}

/// Checks feasibility and, when infeasible, runs a deletion filter over tag
/// groups to find a small contradictory subset.
pub fn falsify(built: &BuiltModel) -> Result<Verdict> {
    let n = built.layout.total_dim;
    let rows: Vec<&Constraint> = built.constraints.constraints.iter().filter(|c| !c.is_bound()).collect();
    let (feasible, phase_one_value) = feasible_with(n, &rows)?;
    let mut solves = 1;
    let mut verdict = Verdict {
        feasible,
        phase_one_value,
        irreducible_groups: vec![],
        blamed: vec![],
        skipped: built.constraints.skipped.clone(),
        lp_solves: 0,
    };
    if feasible {
        verdict.lp_solves = solves;
        return Ok(verdict);
    }

    let mut groups: Vec<String> = Vec::new();
    for c in &rows {
        let g = tag_group(&c.tag);
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    groups.sort_by_key(|g| group_rank(g));
    let grouped: Vec<(String, String)> = rows.iter().map(|c| (c.tag.clone(), tag_group(&c.tag))).collect();

    let mut active: Vec<bool> = vec![true; groups.len()];
    for k in 0..groups.len() {
        active[k] = false;
        let keep: Vec<&Constraint> = rows
            .iter()
            .zip(&grouped)
            .filter(|(_, (_, g))| groups.iter().zip(&active).any(|(name, &on)| on && name == g))
            .map(|(c, _)| *c)
            .collect();
        let (still_feasible, _) = feasible_with(n, &keep)?;
        solves += 1;
        if still_feasible {
            active[k] = true;
        }
    }
    verdict.irreducible_groups = groups
        .iter()
        .zip(&active)
        .filter(|(_, &on)| on)
        .map(|(g, _)| g.clone())
        .collect();
    verdict.blamed = verdict
        .irreducible_groups
        .iter()
        .filter(|g| is_assumption(g))
        .cloned()
        .collect();
    if verdict.blamed.is_empty() {
        verdict.blamed = verdict.irreducible_groups.clone();
    }
    verdict.lp_solves = solves;
    Ok(verdict)
}
