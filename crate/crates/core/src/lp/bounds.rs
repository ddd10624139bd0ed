use serde::{Deserialize, Serialize};

use super::simplex::{Direction, PhaseOne, SolveOutcome, SolverOptions, Status, Tableau};
use crate::constraints::{LinExpr, LinearProgram};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Lower and upper bound of an objective over the feasible set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub lower: f64,
    pub upper: f64,
    pub lower_status: DirectionStatus,
    pub upper_status: DirectionStatus,
    #[serde(default)]
    pub lower_certificate: Vec<f64>,
    #[serde(default)]
    pub upper_certificate: Vec<f64>,
    #[serde(default)]
    pub max_duality_gap: f64,
}

impl BoundsResult {
    /// The constraints admit no point: the assumptions contradict the data.
    pub fn is_falsified(&self) -> bool {
        self.lower_status == DirectionStatus::Infeasible || self.upper_status == DirectionStatus::Infeasible
    }

    pub fn is_optimal(&self) -> bool {
        self.lower_status == DirectionStatus::Optimal && self.upper_status == DirectionStatus::Optimal
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        self.lower - tol <= x && x <= self.upper + tol
    }

    fn falsified(query: Option<String>) -> Self {
        Self {
            query,
            lower: f64::NAN,
            upper: f64::NAN,
            lower_status: DirectionStatus::Infeasible,
            upper_status: DirectionStatus::Infeasible,
            lower_certificate: Vec::new(),
            upper_certificate: Vec::new(),
            max_duality_gap: 0.0,
        }
    }

    fn from_outcomes(query: Option<String>, lo: SolveOutcome, hi: SolveOutcome) -> Self {
        let split = |o: SolveOutcome, unbounded: f64| match o.status {
            Status::Optimal { value, certificate } => {
                (value, DirectionStatus::Optimal, certificate, o.duality_gap.unwrap_or(0.0))
            }
            Status::Unbounded => (unbounded, DirectionStatus::Unbounded, Vec::new(), 0.0),
            Status::Infeasible { .. } => (f64::NAN, DirectionStatus::Infeasible, Vec::new(), 0.0),
        };
        let (lower, lower_status, lower_certificate, g1) = split(lo, f64::NEG_INFINITY);
        let (upper, upper_status, upper_certificate, g2) = split(hi, f64::INFINITY);
        Self {
            query,
            lower,
            upper,
            lower_status,
            upper_status,
            lower_certificate,
            upper_certificate,
            max_duality_gap: g1.max(g2),
        }
    }
}

/// A feasible region solved once by phase one, reusable for any number of
/// objectives.
#[derive(Clone, Debug)]
pub struct Bounder {
    feasible: Option<Tableau>,
    phase_one_value: f64,
}

impl Bounder {
    /// Runs phase one on the constraints of `lp` (its objective is ignored).
    pub fn new(lp: &LinearProgram) -> Result<Self> {
        Self::with_options(lp, SolverOptions::default())
    }

    pub fn with_options(lp: &LinearProgram, opts: SolverOptions) -> Result<Self> {
        Ok(match Tableau::phase_one(lp, opts)? {
            PhaseOne::Feasible(t) => Self {
                feasible: Some(t),
                phase_one_value: 0.0,
            },
            PhaseOne::Infeasible { phase_one_value, .. } => Self {
                feasible: None,
                phase_one_value,
            },
        })
    }

    pub fn is_feasible(&self) -> bool {
        self.feasible.is_some()
    }

    /// Residual of the phase-one objective (0 when feasible).
    pub fn phase_one_value(&self) -> f64 {
        self.phase_one_value
    }

    pub fn solve(&self, objective: &LinExpr, direction: Direction) -> Result<SolveOutcome> {
        match &self.feasible {
            Some(t) => t.clone().optimize(objective, direction),
            None => Ok(SolveOutcome {
                status: Status::Infeasible {
                    phase_one_value: self.phase_one_value,
                },
                iterations: 0,
                pivots: 0,
                duals: None,
                duality_gap: None,
            }),
        }
    }

    /// Minimum and maximum of `objective`; the two directions run concurrently.
    pub fn bound(&self, objective: &LinExpr, query: Option<String>) -> Result<BoundsResult> {
        if self.feasible.is_none() {
            return Ok(BoundsResult::falsified(query));
        }
        let (lo, hi) = rayon::join(
            || self.solve(objective, Direction::Min),
            || self.solve(objective, Direction::Max),
        );
        Ok(BoundsResult::from_outcomes(query, lo?, hi?))
    }
}

/// Lower and upper bound of the program's objective.
pub fn bound_query(lp: &LinearProgram) -> Result<BoundsResult> {
    Bounder::new(lp)?.bound(&lp.objective, None)
}
