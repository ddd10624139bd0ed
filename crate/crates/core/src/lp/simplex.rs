//! Dense two-phase primal simplex.
//!
//! Standard form: every row `a·x (+ s) = b` with `b ≥ 0` (rows with negative
//! right-hand side are negated), structural and slack variables nonnegative.
//! Every row also owns an artificial unit column. Artificials never enter the
//! basis; the ones that start basic are driven to zero in phase one. Their
//! reduced costs in phase two give the row duals.
//!
//! Pricing is Dantzig's rule until `10·(rows + cols)` pivots have been spent,
//! after which Bland's rule takes over.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{LinExpr, LinearProgram, Relation};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub pivot_tol: f64,
    /// Phase-one optimum above this means infeasible.
    pub feas_tol: f64,
    pub max_pivots: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            pivot_tol: 1e-9,
            feas_tol: 1e-7,
            max_pivots: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Status {
    Optimal { value: f64, certificate: Vec<f64> },
    Infeasible { phase_one_value: f64 },
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub status: Status,
    pub iterations: usize,
    pub pivots: usize,
    /// Row duals in program row order (equalities, then inequalities), when optimal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duals: Option<Vec<f64>>,
    /// `|primal - dual|` objective gap, when optimal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duality_gap: Option<f64>,
}

impl SolveOutcome {
    pub fn value(&self) -> Option<f64> {
        match &self.status {
            Status::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn certificate(&self) -> Option<&[f64]> {
        match &self.status {
            Status::Optimal { certificate, .. } => Some(certificate),
            _ => None,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self.status, Status::Infeasible { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pricing {
    Dantzig,
    Bland,
}

/// Simplex tableau over `[structural | slack | artificial | rhs]`.
#[derive(Clone, Debug)]
pub struct Tableau {
    m: usize,
    n_struct: usize,
    n_slack: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    /// Original right-hand sides (before sign normalization), per row.
    orig_rhs: Vec<f64>,
    /// -1 where the row was negated.
    row_sign: Vec<f64>,
    /// Reduced costs over all columns and current objective value.
    d: Vec<f64>,
    z: f64,
    opts: SolverOptions,
    pivots: usize,
    iterations: usize,
    pricing: Pricing,
}

/// Result of phase one: a feasible tableau ready for any objective, or an
/// infeasibility verdict.
#[derive(Clone, Debug)]
pub enum PhaseOne {
    Feasible(Tableau),
    Infeasible {
        phase_one_value: f64,
        iterations: usize,
        pivots: usize,
    },
}

enum StepResult {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn art_start(&self) -> usize {
        self.n_struct + self.n_slack
    }

    fn n_cols(&self) -> usize {
        self.width - 1
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.width + self.width - 1]
    }

    fn build(lp: &LinearProgram, opts: SolverOptions) -> Result<Self> {
        lp.check_indices()?;
        let n_struct = lp.n_vars;
        let n_slack = lp.inequalities.len();
        let m = lp.equalities.len() + n_slack;
        let width = n_struct + n_slack + m + 1;
        let mut data = vec![0.0; m * width];
        let mut basis = Vec::with_capacity(m);
        let mut orig_rhs = Vec::with_capacity(m);
        let mut row_sign = Vec::with_capacity(m);
        for (i, c) in lp.rows().enumerate() {
            let row = &mut data[i * width..(i + 1) * width];
            for &(j, a) in &c.expr.terms {
                row[j] += a;
            }
            let b = -c.expr.constant;
            orig_rhs.push(b);
            let slack_col = (c.relation == Relation::Le).then(|| n_struct + (i - lp.equalities.len()));
            if let Some(s) = slack_col {
                row[s] = 1.0;
            }
            let art = n_struct + n_slack + i;
            row[art] = 1.0;
            row[width - 1] = b;
            let sign = if b < 0.0 { -1.0 } else { 1.0 };
            if sign < 0.0 {
                for x in row.iter_mut() {
                    *x = -*x;
                }
                // keep the artificial as a +1 unit column
                row[art] = 1.0;
            }
            row_sign.push(sign);
            basis.push(match slack_col {
                Some(s) if sign > 0.0 => s,
                _ => art,
            });
        }
        let n_cols = width - 1;
        Ok(Self {
            m,
            n_struct,
            n_slack,
            width,
            data,
            basis,
            orig_rhs,
            row_sign,
            d: vec![0.0; n_cols],
            z: 0.0,
            opts,
            pivots: 0,
            iterations: 0,
            pricing: Pricing::Dantzig,
        })
    }

    /// Sets reduced costs for cost vector `cost` over all columns.
    fn price_out(&mut self, cost: &[f64]) {
        let mut d = cost.to_vec();
        let mut z = 0.0;
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.data[i * self.width..(i + 1) * self.width];
            for (dj, &a) in d.iter_mut().zip(&row[..self.width - 1]) {
                *dj -= cb * a;
            }
            z += cb * row[self.width - 1];
        }
        self.d = d;
        self.z = z;
    }

    fn choose_entering(&self) -> Option<usize> {
        let tol = self.opts.pivot_tol;
        let limit = self.art_start();
        match self.pricing {
            Pricing::Dantzig => {
                let mut best = None;
                let mut best_d = -tol;
                for (j, &dj) in self.d[..limit].iter().enumerate() {
                    if dj < best_d {
                        best_d = dj;
                        best = Some(j);
                    }
                }
                best
            }
            Pricing::Bland => self.d[..limit].iter().position(|&dj| dj < -tol),
        }
    }

    fn choose_leaving(&self, q: usize) -> Option<usize> {
        let tol = self.opts.pivot_tol;
        let mut best: Option<(usize, f64, f64)> = None;
        for i in 0..self.m {
            let a = self.at(i, q);
            if a <= tol {
                continue;
            }
            let ratio = self.rhs(i).max(0.0) / a;
            best = match best {
                None => Some((i, ratio, a)),
                Some((bi, br, ba)) => {
                    let better = if ratio < br - 1e-12 {
                        true
                    } else if ratio <= br + 1e-12 {
                        match self.pricing {
                            Pricing::Dantzig => a > ba,
                            Pricing::Bland => self.basis[i] < self.basis[bi],
                        }
                    } else {
                        false
                    };
                    if better {
                        Some((i, ratio, a))
                    } else {
                        Some((bi, br, ba))
                    }
                }
            };
        }
        best.map(|b| b.0)
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width;
        let piv = self.at(r, q);
        {
            let row = &mut self.data[r * w..(r + 1) * w];
            for x in row.iter_mut() {
                *x /= piv;
            }
            row[q] = 1.0;
        }
        let prow: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        let nz: Vec<usize> = (0..w).filter(|&j| prow[j] != 0.0).collect();

        let update = |i: usize, row: &mut [f64]| {
            if i == r {
                return;
            }
            let f = row[q];
            if f == 0.0 {
                return;
            }
            for &j in &nz {
                row[j] -= f * prow[j];
            }
            row[q] = 0.0;
        };
        if self.m * nz.len() > 200_000 {
            self.data
                .par_chunks_mut(w)
                .enumerate()
                .for_each(|(i, row)| update(i, row));
        } else {
            self.data.chunks_mut(w).enumerate().for_each(|(i, row)| update(i, row));
        }

        let dq = self.d[q];
        if dq != 0.0 {
            for &j in &nz {
                if j < w - 1 {
                    self.d[j] -= dq * prow[j];
                }
            }
            self.d[q] = 0.0;
            self.z += dq * prow[w - 1];
        }
        self.basis[r] = q;
        self.pivots += 1;
        if self.pricing == Pricing::Dantzig && self.pivots >= 10 * (self.m + self.n_cols()) {
            self.pricing = Pricing::Bland;
        }
    }

    fn iterate(&mut self) -> Result<StepResult> {
        loop {
            self.iterations += 1;
            let Some(q) = self.choose_entering() else {
                return Ok(StepResult::Optimal);
            };
            let Some(r) = self.choose_leaving(q) else {
                return Ok(StepResult::Unbounded);
            };
            if self.pivots >= self.opts.max_pivots {
                return Err(Error::IterationLimit(self.opts.max_pivots));
            }
            self.pivot(r, q);
        }
    }

    /// Phase one. On success the tableau holds a feasible basis with no
    /// artificial carrying weight; rows that remain artificial-basic are
    /// redundant.
    pub fn phase_one(lp: &LinearProgram, opts: SolverOptions) -> Result<PhaseOne> {
        let mut t = Self::build(lp, opts)?;
        let mut cost = vec![0.0; t.n_cols()];
        for c in cost[t.art_start()..].iter_mut() {
            *c = 1.0;
        }
        t.price_out(&cost);
        match t.iterate()? {
            StepResult::Optimal => {}
            StepResult::Unbounded => unreachable!("phase one objective is bounded below"),
        }
        if t.z > opts.feas_tol {
            return Ok(PhaseOne::Infeasible {
                phase_one_value: t.z,
                iterations: t.iterations,
                pivots: t.pivots,
            });
        }
        t.drive_out_artificials();
        Ok(PhaseOne::Feasible(t))
    }

    fn drive_out_artificials(&mut self) {
        let art = self.art_start();
        for r in 0..self.m {
            if self.basis[r] < art {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..art {
                let a = self.at(r, j).abs();
                if a > self.opts.pivot_tol && best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            if let Some((q, _)) = best {
                self.pivot(r, q);
            }
        }
        // Clear round-off on the right-hand side of redundant rows.
        for r in 0..self.m {
            if self.basis[r] >= art {
                let idx = r * self.width + self.width - 1;
                self.data[idx] = 0.0;
            }
        }
    }

    /// Phase two from the current feasible basis.
    pub fn optimize(mut self, objective: &LinExpr, direction: Direction) -> Result<SolveOutcome> {
        let sign = match direction {
            Direction::Min => 1.0,
            Direction::Max => -1.0,
        };
        let mut cost = vec![0.0; self.n_cols()];
        for &(j, c) in &objective.terms {
            cost[j] += sign * c;
        }
        self.price_out(&cost);
        match self.iterate()? {
            StepResult::Unbounded => Ok(SolveOutcome {
                status: Status::Unbounded,
                iterations: self.iterations,
                pivots: self.pivots,
                duals: None,
                duality_gap: None,
            }),
            StepResult::Optimal => {
                let x = self.primal();
                let value = objective.eval(&x);
                let duals = self.duals(sign);
                let dual_value: f64 = duals.iter().zip(&self.orig_rhs).map(|(y, b)| y * b).sum::<f64>()
                    + objective.constant;
                Ok(SolveOutcome {
                    status: Status::Optimal {
                        value,
                        certificate: x,
                    },
                    iterations: self.iterations,
                    pivots: self.pivots,
                    duality_gap: Some((value - dual_value).abs()),
                    duals: Some(duals),
                })
            }
        }
    }

    fn primal(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n_struct];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n_struct {
                x[b] = self.rhs(i).max(0.0);
            }
        }
        x
    }

    /// Duals of the original rows for the original (unsigned) objective.
    fn duals(&self, sign: f64) -> Vec<f64> {
        let art = self.art_start();
        (0..self.m)
            .map(|i| -self.d[art + i] * self.row_sign[i] * sign)
            .collect()
    }

    pub fn pivots(&self) -> usize {
        self.pivots
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Solves `lp` in the given direction.
pub fn solve(lp: &LinearProgram, direction: Direction) -> Result<SolveOutcome> {
    solve_with(lp, direction, SolverOptions::default())
}

pub fn solve_with(lp: &LinearProgram, direction: Direction, opts: SolverOptions) -> Result<SolveOutcome> {
    match Tableau::phase_one(lp, opts)? {
        PhaseOne::Feasible(t) => t.optimize(&lp.objective, direction),
        PhaseOne::Infeasible {
            phase_one_value,
            iterations,
            pivots,
        } => Ok(SolveOutcome {
            status: Status::Infeasible { phase_one_value },
            iterations,
            pivots,
            duals: None,
            duality_gap: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Constraint;

    fn expr(terms: &[(usize, f64)], c: f64) -> LinExpr {
        LinExpr::new(terms.to_vec(), c)
    }

    fn lp(n: usize, obj: LinExpr, eqs: Vec<LinExpr>, les: Vec<LinExpr>) -> LinearProgram {
        let mut p = LinearProgram::new(n, obj);
        p.add_constraints(eqs.into_iter().enumerate().map(|(i, e)| Constraint::eq(e, format!("e{i}"))));
        p.add_constraints(les.into_iter().enumerate().map(|(i, e)| Constraint::le(e, format!("l{i}"))));
        p
    }

    #[test]
    fn max_single_bounded_variable() {
        let p = lp(1, expr(&[(0, 1.0)], 0.0), vec![], vec![expr(&[(0, 1.0)], -0.7)]);
        let out = solve(&p, Direction::Max).unwrap();
        assert!((out.value().unwrap() - 0.7).abs() < 1e-12);
        assert!(out.duality_gap.unwrap() < 1e-9);
        let out = solve(&p, Direction::Min).unwrap();
        assert!(out.value().unwrap().abs() < 1e-12);
    }

    #[test]
    fn contradictory_equalities_are_infeasible() {
        let p = lp(
            1,
            expr(&[(0, 1.0)], 0.0),
            vec![expr(&[(0, 1.0)], -0.3), expr(&[(0, 1.0)], -0.5)],
            vec![],
        );
        assert!(solve(&p, Direction::Min).unwrap().is_infeasible());
    }

    #[test]
    fn unbounded_direction_detected() {
        // max x0 - x1 s.t. x0 - x1 >= 1  (i.e. -x0 + x1 + 1 <= 0)
        let p = lp(2, expr(&[(0, 1.0), (1, -1.0)], 0.0), vec![], vec![expr(&[(0, -1.0), (1, 1.0)], 1.0)]);
        assert_eq!(solve(&p, Direction::Max).unwrap().status, Status::Unbounded);
        let min = solve(&p, Direction::Min).unwrap();
        assert!((min.value().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn textbook_program() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36 at (2, 6)
        let p = lp(
            2,
            expr(&[(0, 3.0), (1, 5.0)], 0.0),
            vec![],
            vec![
                expr(&[(0, 1.0)], -4.0),
                expr(&[(1, 2.0)], -12.0),
                expr(&[(0, 3.0), (1, 2.0)], -18.0),
            ],
        );
        let out = solve(&p, Direction::Max).unwrap();
        assert!((out.value().unwrap() - 36.0).abs() < 1e-9);
        let x = out.certificate().unwrap();
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
        assert!(out.duality_gap.unwrap() < 1e-7);
        // duals of the three rows: 0, 1.5, 1
        let y = out.duals.unwrap();
        assert!((y[0]).abs() < 1e-9 && (y[1] - 1.5).abs() < 1e-9 && (y[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn redundant_rows_and_negative_rhs() {
        // x + y = 1 twice, x - y >= -0.5 (i.e. -x + y - 0.5 <= 0), min y
        let p = lp(
            2,
            expr(&[(1, 1.0)], 0.0),
            vec![expr(&[(0, 1.0), (1, 1.0)], -1.0), expr(&[(0, 2.0), (1, 2.0)], -2.0)],
            vec![expr(&[(0, -1.0), (1, 1.0)], -0.5), expr(&[(0, 1.0)], 2.0)],
        );
        // the last row says x + 2 <= 0: infeasible
        assert!(solve(&p, Direction::Min).unwrap().is_infeasible());
        let mut ok = p.clone();
        ok.inequalities.pop();
        let out = solve(&ok, Direction::Max).unwrap();
        assert!((out.value().unwrap() - 0.75).abs() < 1e-9);
        assert!(out.duality_gap.unwrap() < 1e-7);
    }

    #[test]
    fn degenerate_program_terminates() {
        // Beale's cycling example (cycles under naive Dantzig with bad ties).
        // min -0.75x4 + 150x5 - 0.02x6 + 6x7
        let p = lp(
            4,
            expr(&[(0, -0.75), (1, 150.0), (2, -0.02), (3, 6.0)], 0.0),
            vec![],
            vec![
                expr(&[(0, 0.25), (1, -60.0), (2, -0.04), (3, 9.0)], 0.0),
                expr(&[(0, 0.5), (1, -90.0), (2, -0.02), (3, 3.0)], 0.0),
                expr(&[(2, 1.0)], -1.0),
            ],
        );
        let out = solve(&p, Direction::Min).unwrap();
        assert!((out.value().unwrap() + 0.05).abs() < 1e-9);
    }

    #[test]
    fn deterministic_pivots() {
        let p = lp(
            3,
            expr(&[(0, 1.0), (1, 2.0), (2, -1.0)], 0.0),
            vec![expr(&[(0, 1.0), (1, 1.0), (2, 1.0)], -1.0)],
            vec![expr(&[(0, 1.0), (2, -1.0)], -0.2)],
        );
        let a = solve(&p, Direction::Max).unwrap();
        let b = solve(&p, Direction::Max).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iteration_limit_is_an_error() {
        let p = lp(
            2,
            expr(&[(0, 3.0), (1, 5.0)], 0.0),
            vec![],
            vec![expr(&[(0, 1.0)], -4.0), expr(&[(1, 2.0)], -12.0), expr(&[(0, 3.0), (1, 2.0)], -18.0)],
        );
        let opts = SolverOptions {
            max_pivots: 1,
            ..Default::default()
        };
        assert!(matches!(solve_with(&p, Direction::Max, opts), Err(Error::IterationLimit(1))));
    }
}
