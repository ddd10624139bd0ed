//! Bounds on interventional probabilities in binary causal models.
//!
//! A model is a set of small margins (subsets of variables in causal order),
//! each parameterized by a distribution over joint response functions. Data
//! tables, agreement on overlaps and weak-edge assumptions become linear
//! constraints, and lower/upper bounds on a query come from two linear
//! programs.
//!
//! ```
//! use margpoly::{bound, presets, Query};
//!
//! let spec = presets::paper_n4_model(&presets::N4Options::default());
//! let tables = presets::uniform_tables(4, &spec.regimes_available);
//! let q: Query = "P(X4=1|do(X1=0))".parse().unwrap();
//! let b = bound(&spec, &tables, &q).unwrap();
//! assert!(b.lower <= b.upper);
//! ```

pub mod constraints;
pub mod error;
pub mod falsify;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod presets;
pub mod response;
pub mod scm;

pub use constraints::{assemble_lp, build_model, query_objective, BuiltModel, Constraint, LinExpr, LinearProgram};
pub use error::{Error, Result};
pub use lp::{bound_query, Bounder, BoundsResult, Direction};
pub use model::{
    Assignment, MarginSpec, ModelSpec, Query, Regime, RegimeTable, VariableId, WeakEdgeSpec,
};
pub use scm::GroundTruthScm;

/// Lower and upper bound of one query under every constraint of `spec`.
pub fn bound(spec: &ModelSpec, tables: &[RegimeTable], query: &Query) -> Result<BoundsResult> {
    let built = build_model(spec, tables)?;
    let (objective, margin) = query_objective(&built, tables, query)?;
    let lp = built.program(objective);
    Bounder::new(&lp)?.bound(&lp.objective, Some(format!("{query}[M{margin}]")))
}
