//! Linear programming: a dense two-phase simplex, bound computation with
//! certificates, and LP/MPS export.

mod bounds;
mod export;
mod simplex;

pub use crate::constraints::LinearProgram;
pub use bounds::{bound_query, Bounder, BoundsResult, DirectionStatus};
pub use export::{export_lp, ExportFormat};
pub use simplex::{solve, solve_with, Direction, PhaseOne, SolveOutcome, SolverOptions, Status, Tableau};
