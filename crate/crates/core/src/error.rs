use thiserror::Error;

use crate::model::{Regime, VariableId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no margin contains all of the query variables {0:?}")]
    NoEligibleMargin(Vec<VariableId>),

    #[error("unknown margin id {0}")]
    UnknownMargin(usize),

    #[error("unsupported arity: {0}")]
    UnsupportedArity(String),

    #[error("regime {regime} intervenes outside margin {margin}")]
    RegimeOutsideMargin { margin: usize, regime: Regime },

    #[error("margins {a} and {b} have different scope variables")]
    ScopeMismatch { a: usize, b: usize },

    #[error("weak bidirected {edge} in margin {margin} needs regime {regime} in the data; without it the constraint is polynomial")]
    RegimeNotInData {
        margin: usize,
        edge: String,
        regime: Regime,
    },

    #[error("conditioning set for {edge} in margin {margin} must be empty or equal the margin's scope variables")]
    UnsupportedConditioning { margin: usize, edge: String },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("strength undefined: {0}")]
    StrengthUndefined(String),

    #[error("simplex iteration limit of {0} pivots reached")]
    IterationLimit(usize),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
