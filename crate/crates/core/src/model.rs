//! Domain types: variables, regimes, margins, weak-edge declarations,
//! regime tables and queries, plus model validation.
//!
//! Variables are binary and indexed densely from 0. Causal order is ascending
//! index. A full joint assignment of `n` variables is encoded as an integer
//! whose bit `k` holds the value of variable `k`. Variables are displayed
//! 1-based (`X1` is index 0).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of an observed binary variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VariableId(pub usize);

impl VariableId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn bit(self) -> usize {
        1 << self.0
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "X{}", self.0 + 1)
    }
}

impl FromStr for VariableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let digits = s
            .strip_prefix('X')
            .or_else(|| s.strip_prefix('x'))
            .ok_or_else(|| Error::Parse(format!("variable `{s}` must look like X<k>")))?;
        let k: usize = digits
            .parse()
            .map_err(|_| Error::Parse(format!("variable `{s}` must look like X<k>")))?;
        if k == 0 {
            return Err(Error::Parse(format!("variable `{s}`: names are 1-based")));
        }
        Ok(VariableId(k - 1))
    }
}

/// A partial assignment of binary values to distinct variables, kept sorted
/// by variable.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<(VariableId, u8)>", into = "Vec<(VariableId, u8)>")]
pub struct Assignment(Vec<(VariableId, u8)>);

impl Assignment {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn new(pairs: impl IntoIterator<Item = (VariableId, u8)>) -> Result<Self> {
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        pairs.sort_unstable();
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidModel(format!("variable {} assigned twice", w[0].0)));
            }
        }
        if let Some((v, x)) = pairs.iter().find(|(_, x)| *x > 1) {
            return Err(Error::InvalidModel(format!("{v}={x} is not binary")));
        }
        Ok(Self(pairs))
    }

    /// Assignment of `vars` taking bit `t` of `bits` as the value of `vars[t]`.
    pub fn from_bits(vars: &[VariableId], bits: usize) -> Self {
        let mut pairs: Vec<_> = vars
            .iter()
            .enumerate()
            .map(|(t, &v)| (v, ((bits >> t) & 1) as u8))
            .collect();
        pairs.sort_unstable();
        Self(pairs)
    }

    /// Every assignment of `vars`, in little-endian counting order.
    pub fn all_over(vars: &[VariableId]) -> impl Iterator<Item = Assignment> + '_ {
        (0..1usize << vars.len()).map(move |bits| Self::from_bits(vars, bits))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VariableId, u8)> + '_ {
        self.0.iter().copied()
    }

    pub fn vars(&self) -> Vec<VariableId> {
        self.0.iter().map(|&(v, _)| v).collect()
    }

    pub fn get(&self, var: VariableId) -> Option<u8> {
        self.0
            .binary_search_by_key(&var, |&(v, _)| v)
            .ok()
            .map(|i| self.0[i].1)
    }

    pub fn contains_var(&self, var: VariableId) -> bool {
        self.get(var).is_some()
    }

    /// Union of two assignments; fails if they disagree on a shared variable.
    pub fn merge(&self, other: &Assignment) -> Result<Assignment> {
        let mut out = self.0.clone();
        for &(v, x) in &other.0 {
            match self.get(v) {
                Some(y) if y != x => {
                    return Err(Error::InvalidModel(format!("conflicting values for {v}")))
                }
                Some(_) => {}
                None => out.push((v, x)),
            }
        }
        out.sort_unstable();
        Ok(Self(out))
    }

    /// Whether the full joint assignment `joint` agrees on every assigned variable.
    pub fn matches_joint(&self, joint: usize) -> bool {
        self.0
            .iter()
            .all(|&(v, x)| ((joint >> v.0) & 1) as u8 == x)
    }

    /// (mask, bits) form over the global joint index.
    pub fn mask_bits(&self) -> (usize, usize) {
        self.0.iter().fold((0, 0), |(m, b), &(v, x)| {
            (m | v.bit(), b | ((x as usize) << v.0))
        })
    }
}

impl TryFrom<Vec<(VariableId, u8)>> for Assignment {
    type Error = Error;

    fn try_from(pairs: Vec<(VariableId, u8)>) -> Result<Self> {
        Assignment::new(pairs)
    }
}

impl From<Assignment> for Vec<(VariableId, u8)> {
    fn from(a: Assignment) -> Self {
        a.0
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (v, x)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}={x}")?;
        }
        Ok(())
    }
}

impl FromStr for Assignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Self::empty());
        }
        let pairs = s
            .split(',')
            .map(|item| {
                let (v, x) = item
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("expected X<k>=<0|1>, got `{item}`")))?;
                let x: u8 = x
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad value in `{item}`")))?;
                if x > 1 {
                    return Err(Error::Parse(format!("value in `{item}` is not binary")));
                }
                Ok((v.parse::<VariableId>()?, x))
            })
            .collect::<Result<Vec<_>>>()?;
        Assignment::new(pairs).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// An intervention regime `do(...)`. The empty regime is observational.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Regime {
    pub interventions: Assignment,
}

impl Regime {
    pub fn observational() -> Self {
        Self::default()
    }

    pub fn new(pairs: impl IntoIterator<Item = (VariableId, u8)>) -> Result<Self> {
        Ok(Self {
            interventions: Assignment::new(pairs)?,
        })
    }

    pub fn from_assignment(interventions: Assignment) -> Self {
        Self { interventions }
    }

    pub fn is_observational(&self) -> bool {
        self.interventions.is_empty()
    }

    pub fn vars(&self) -> Vec<VariableId> {
        self.interventions.vars()
    }

    pub fn get(&self, var: VariableId) -> Option<u8> {
        self.interventions.get(var)
    }

    pub fn intervenes_on(&self, var: VariableId) -> bool {
        self.interventions.contains_var(var)
    }

    pub fn intervenes_only_within(&self, vars: &[VariableId]) -> bool {
        self.interventions.iter().all(|(v, _)| vars.contains(&v))
    }

    pub fn merge(&self, other: &Regime) -> Result<Regime> {
        Ok(Regime::from_assignment(self.interventions.merge(&other.interventions)?))
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "do({})", self.interventions)
    }
}

impl FromStr for Regime {
    type Err = Error;

    /// Accepts `do(X2=0,X3=1)`, `X2=0,X3=1`, `do()` or `obs`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("obs") {
            return Ok(Self::observational());
        }
        let inner = match s.strip_prefix("do(") {
            Some(rest) => rest
                .strip_suffix(')')
                .ok_or_else(|| Error::Parse(format!("unbalanced parentheses in `{s}`")))?,
            None => s,
        };
        Ok(Self::from_assignment(inner.parse()?))
    }
}

/// One marginal causal model: its variables, optional conditional scope, and
/// the scope values it includes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub id: usize,
    pub vars: Vec<VariableId>,
    #[serde(default)]
    pub scope_vars: Vec<VariableId>,
    #[serde(default)]
    pub scope_values: Vec<Vec<u8>>,
}

impl MarginSpec {
    pub fn new(id: usize, vars: impl IntoIterator<Item = usize>) -> Self {
        let mut vars: Vec<_> = vars.into_iter().map(VariableId).collect();
        vars.sort_unstable();
        vars.dedup();
        Self {
            id,
            vars,
            scope_vars: Vec::new(),
            scope_values: Vec::new(),
        }
    }

    pub fn with_scope(mut self, scope_vars: Vec<VariableId>, scope_values: Vec<Vec<u8>>) -> Self {
        self.scope_vars = scope_vars;
        self.scope_values = scope_values;
        self
    }

    pub fn contains(&self, var: VariableId) -> bool {
        self.vars.contains(&var)
    }

    pub fn contains_all(&self, vars: &[VariableId]) -> bool {
        vars.iter().all(|v| self.contains(*v))
    }

    /// Causal position of `var` inside the margin.
    pub fn position(&self, var: VariableId) -> Option<usize> {
        self.vars.iter().position(|&v| v == var)
    }

    /// Scope assignments, one per parameter block. An unscoped margin has a
    /// single block with the empty assignment.
    pub fn scope_assignments(&self) -> Vec<Assignment> {
        if self.scope_vars.is_empty() {
            return vec![Assignment::empty()];
        }
        self.scope_values
            .iter()
            .map(|vals| {
                Assignment::new(self.scope_vars.iter().copied().zip(vals.iter().copied()))
                    .expect("validated scope value")
            })
            .collect()
    }

    pub fn name(&self) -> String {
        format!("M{}", self.id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeakEdgeKind {
    Directed,
    Bidirected,
}

/// An ε-weak directed edge `from -> to` or bidirected chain `from <-> to`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakEdgeSpec {
    pub kind: WeakEdgeKind,
    pub from: VariableId,
    pub to: VariableId,
    pub epsilon: f64,
    #[serde(default)]
    pub condition_on_ancestors: Vec<VariableId>,
}

impl WeakEdgeSpec {
    pub fn directed(from: usize, to: usize, epsilon: f64) -> Self {
        Self {
            kind: WeakEdgeKind::Directed,
            from: VariableId(from),
            to: VariableId(to),
            epsilon,
            condition_on_ancestors: Vec::new(),
        }
    }

    pub fn bidirected(from: usize, to: usize, epsilon: f64) -> Self {
        Self {
            kind: WeakEdgeKind::Bidirected,
            ..Self::directed(from, to, epsilon)
        }
    }

    /// `X1->X4` or `X1<->X4`.
    pub fn label(&self) -> String {
        match self.kind {
            WeakEdgeKind::Directed => format!("{}->{}", self.from, self.to),
            WeakEdgeKind::Bidirected => format!("{}<->{}", self.from, self.to),
        }
    }
}

/// A weak edge together with the margins it constrains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakEdgeDecl {
    #[serde(flatten)]
    pub edge: WeakEdgeSpec,
    pub margins: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherencePair {
    pub a: usize,
    pub b: usize,
    pub overlap: Vec<VariableId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_vars: usize,
    pub margins: Vec<MarginSpec>,
    #[serde(default)]
    pub coherence_pairs: Vec<CoherencePair>,
    #[serde(default)]
    pub weak_edges: Vec<WeakEdgeDecl>,
    #[serde(default)]
    pub regimes_available: Vec<Regime>,
}

/// A violated model rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Margin size cap: at most five within-margin parents per variable.
pub const MAX_MARGIN_SIZE: usize = 6;

impl ModelSpec {
    pub fn margin(&self, id: usize) -> Result<&MarginSpec> {
        self.margins
            .iter()
            .find(|m| m.id == id)
            .ok_or(Error::UnknownMargin(id))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Checks every model invariant. Returns an empty list iff the model is
    /// well-formed.
    pub fn validate(&self) -> Vec<Diagnostic> {
        validate_model(self)
    }
}

fn is_strictly_ascending(vars: &[VariableId]) -> bool {
    vars.windows(2).all(|w| w[0] < w[1])
}

pub fn validate_model(spec: &ModelSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |field: String, rule: &str| {
        out.push(Diagnostic {
            field,
            rule: rule.to_string(),
        })
    };
    let n = spec.n_vars;
    if n == 0 {
        diag("n_vars".into(), "model needs at least one variable");
    }

    let mut seen = BTreeSet::new();
    for (k, m) in spec.margins.iter().enumerate() {
        let field = format!("margins[{k}]");
        if !seen.insert(m.id) {
            diag(format!("{field}.id"), "margin ids must be unique");
        }
        if m.vars.is_empty() {
            diag(format!("{field}.vars"), "margin vars must be nonempty");
        }
        if m.vars.len() > MAX_MARGIN_SIZE {
            diag(format!("{field}.vars"), "margin exceeds six variables (unsupported arity)");
        }
        if m.vars.iter().chain(&m.scope_vars).any(|v| v.0 >= n) {
            diag(field.clone(), "variable index out of range");
        }
        if !is_strictly_ascending(&m.vars) {
            diag(format!("{field}.vars"), "vars must be ascending without repeats");
        }
        if !is_strictly_ascending(&m.scope_vars) {
            diag(format!("{field}.scope_vars"), "scope vars must be ascending without repeats");
        }
        if let Some(&min_var) = m.vars.iter().min() {
            if m.scope_vars.iter().any(|s| *s >= min_var) {
                diag(
                    format!("{field}.scope_vars"),
                    "scope vars must precede every margin var in causal order",
                );
            }
        }
        if m.scope_vars.is_empty() != m.scope_values.is_empty() {
            diag(
                format!("{field}.scope_values"),
                "scope values must be nonempty iff scope vars are nonempty",
            );
        }
        if m
            .scope_values
            .iter()
            .any(|v| v.len() != m.scope_vars.len() || v.iter().any(|&x| x > 1))
        {
            diag(
                format!("{field}.scope_values"),
                "each scope value must be a binary vector matching scope vars",
            );
        }
        let distinct: BTreeSet<_> = m.scope_values.iter().collect();
        if distinct.len() != m.scope_values.len() {
            diag(format!("{field}.scope_values"), "scope values must be distinct");
        }
    }

    for (k, p) in spec.coherence_pairs.iter().enumerate() {
        let field = format!("coherence_pairs[{k}]");
        let (Ok(a), Ok(b)) = (spec.margin(p.a), spec.margin(p.b)) else {
            diag(field, "coherence pair references unknown margin");
            continue;
        };
        if p.overlap.is_empty() {
            diag(format!("{field}.overlap"), "overlap must be nonempty");
        }
        if !p.overlap.iter().all(|v| a.contains(*v) && b.contains(*v)) {
            diag(format!("{field}.overlap"), "overlap not contained in intersection");
        }
        if a.scope_vars != b.scope_vars {
            diag(field, "coherent margins must share scope vars");
        }
    }

    for (k, w) in spec.weak_edges.iter().enumerate() {
        let field = format!("weak_edges[{k}]");
        let e = &w.edge;
        if e.from >= e.to {
            diag(field.clone(), "weak edge must point down causal order");
        }
        if !(0.0..=1.0).contains(&e.epsilon) {
            diag(format!("{field}.epsilon"), "epsilon must lie in [0, 1]");
        }
        if e.condition_on_ancestors.iter().any(|c| *c >= e.from) {
            diag(
                format!("{field}.condition_on_ancestors"),
                "conditioning set must precede the edge source",
            );
        }
        if w.margins.is_empty() {
            diag(format!("{field}.margins"), "weak edge must reference at least one margin");
        }
        for id in &w.margins {
            match spec.margin(*id) {
                Ok(m) if m.contains(e.from) && m.contains(e.to) => {}
                Ok(_) => diag(
                    format!("{field}.margins"),
                    "weak edge endpoints must belong to every referenced margin",
                ),
                Err(_) => diag(format!("{field}.margins"), "weak edge references unknown margin"),
            }
        }
    }

    for (k, r) in spec.regimes_available.iter().enumerate() {
        if r.vars().iter().any(|v| v.0 >= n) {
            diag(format!("regimes_available[{k}]"), "variable index out of range");
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Empirical { sample_count: u64 },
}

/// Probability table over all `n` variables under one regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeTable {
    pub regime: Regime,
    pub probs: Vec<f64>,
    pub provenance: Provenance,
}

impl RegimeTable {
    pub fn n_vars(&self) -> usize {
        self.probs.len().trailing_zeros() as usize
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("table serializes")
    }

    /// Probability of a partial assignment.
    pub fn marginal(&self, event: &Assignment) -> f64 {
        let (mask, bits) = event.mask_bits();
        self.probs
            .iter()
            .enumerate()
            .filter(|(j, _)| j & mask == bits)
            .map(|(_, p)| p)
            .sum()
    }

    /// `P(event | given)`, or `None` when `given` has probability zero.
    pub fn conditional(&self, event: &Assignment, given: &Assignment) -> Option<f64> {
        let denom = self.marginal(given);
        if denom <= 0.0 {
            return None;
        }
        let joint = event.merge(given).ok()?;
        Some(self.marginal(&joint) / denom)
    }

    /// Rule violations of the table itself (length, normalization, regime support).
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.probs.len().is_power_of_two() {
            out.push("probs length must be a power of two".into());
            return out;
        }
        if self.probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            out.push("probabilities must be finite and nonnegative".into());
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            out.push(format!("probabilities sum to {total}, not 1"));
        }
        if self.regime.vars().iter().any(|v| v.0 >= self.n_vars()) {
            out.push("regime variable out of range".into());
        } else {
            let (mask, bits) = self.regime.interventions.mask_bits();
            if self
                .probs
                .iter()
                .enumerate()
                .any(|(j, &p)| j & mask != bits && p != 0.0)
            {
                out.push("mass on assignments contradicting the regime".into());
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QueryTarget {
    /// `P(target = value | regime)`.
    Prob {
        target: VariableId,
        value: u8,
        regime: Regime,
    },
    /// `P(target=1 | do(treatment=1), base) - P(target=1 | do(treatment=0), base)`.
    Ate {
        target: VariableId,
        treatment: VariableId,
        base: Regime,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_id: Option<usize>,
    #[serde(flatten)]
    pub target: QueryTarget,
}

impl Query {
    pub fn prob(target: usize, value: u8, regime: Regime) -> Self {
        Self {
            margin_id: None,
            target: QueryTarget::Prob {
                target: VariableId(target),
                value,
                regime,
            },
        }
    }

    pub fn ate(target: usize, treatment: usize, base: Regime) -> Self {
        Self {
            margin_id: None,
            target: QueryTarget::Ate {
                target: VariableId(target),
                treatment: VariableId(treatment),
                base,
            },
        }
    }

    pub fn in_margin(mut self, id: usize) -> Self {
        self.margin_id = Some(id);
        self
    }

    /// Every variable the query mentions.
    pub fn variables(&self) -> Vec<VariableId> {
        let mut vars = match &self.target {
            QueryTarget::Prob { target, regime, .. } => {
                let mut v = regime.vars();
                v.push(*target);
                v
            }
            QueryTarget::Ate {
                target,
                treatment,
                base,
            } => {
                let mut v = base.vars();
                v.push(*target);
                v.push(*treatment);
                v
            }
        };
        vars.sort_unstable();
        vars.dedup();
        vars
    }

    /// Structural checks that do not depend on a margin.
    pub fn check(&self) -> Result<()> {
        match &self.target {
            QueryTarget::Prob {
                target,
                value,
                regime,
            } => {
                if *value > 1 {
                    return Err(Error::InvalidQuery(format!("value {value} is not binary")));
                }
                if regime.intervenes_on(*target) {
                    return Err(Error::InvalidQuery(format!("target {target} is intervened on")));
                }
            }
            QueryTarget::Ate {
                target,
                treatment,
                base,
            } => {
                if target == treatment {
                    return Err(Error::InvalidQuery("target equals treatment".into()));
                }
                if base.intervenes_on(*target) || base.intervenes_on(*treatment) {
                    return Err(Error::InvalidQuery(
                        "base regime must not intervene on target or treatment".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            QueryTarget::Prob {
                target,
                value,
                regime,
            } => {
                if regime.is_observational() {
                    write!(f, "P({target}={value})")
                } else {
                    write!(f, "P({target}={value}|{regime})")
                }
            }
            QueryTarget::Ate {
                target,
                treatment,
                base,
            } => {
                if base.is_observational() {
                    write!(f, "ATE({treatment}->{target})")
                } else {
                    write!(f, "ATE({treatment}->{target}|{base})")
                }
            }
        }
    }
}

impl FromStr for Query {
    type Err = Error;

    /// Accepts `P(X4=1|do(X1=0))`, `P(X2=1)` and `ATE(X1->X4|do(X2=0))`,
    /// optionally suffixed with `@<margin id>`.
    fn from_str(s: &str) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (body, margin_id) = match s.rsplit_once('@') {
            Some((b, m)) => (
                b.to_string(),
                Some(
                    m.trim_start_matches('M')
                        .parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad margin suffix `@{m}`")))?,
                ),
            ),
            None => (s.clone(), None),
        };
        let bad = || Error::Parse(format!("cannot parse query `{s}`"));
        let (head, inner) = body.split_once('(').ok_or_else(bad)?;
        let inner = inner.strip_suffix(')').ok_or_else(bad)?;
        let (lhs, regime) = match inner.split_once('|') {
            Some((l, r)) => (l, r.parse::<Regime>()?),
            None => (inner, Regime::observational()),
        };
        let target = match head {
            "P" => {
                let event: Assignment = lhs.parse()?;
                if event.len() != 1 {
                    return Err(Error::Parse(format!(
                        "query `{s}` must have exactly one target variable"
                    )));
                }
                let (target, value) = event.iter().next().expect("one target");
                QueryTarget::Prob {
                    target,
                    value,
                    regime,
                }
            }
            "ATE" => {
                let (x, y) = lhs.split_once("->").ok_or_else(bad)?;
                QueryTarget::Ate {
                    target: y.parse()?,
                    treatment: x.parse()?,
                    base: regime,
                }
            }
            _ => return Err(bad()),
        };
        let q = Query { margin_id, target };
        q.check()?;
        Ok(q)
    }
}

/// Lowest-id margin containing every variable of `query`, or the margin the
/// query names explicitly.
pub fn select_margin_for_query<'a>(spec: &'a ModelSpec, query: &Query) -> Result<&'a MarginSpec> {
    let vars = query.variables();
    if let Some(id) = query.margin_id {
        let m = spec.margin(id)?;
        if !m.contains_all(&vars) {
            return Err(Error::InvalidQuery(format!(
                "query {query} mentions variables outside margin {}",
                m.name()
            )));
        }
        return Ok(m);
    }
    spec.margins
        .iter()
        .filter(|m| m.contains_all(&vars))
        .min_by_key(|m| m.id)
        .ok_or(Error::NoEligibleMargin(vars))
}
