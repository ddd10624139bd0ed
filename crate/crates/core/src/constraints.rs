//! Linear constraints over the concatenated margin parameter blocks.
//!
//! Each (margin, scope value) pair owns a block of the global decision vector
//! holding a distribution over the margin's joint response functions. Every
//! implied interventional probability is a 0/1-weighted sum over one block.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    select_margin_for_query, validate_model, Assignment, MarginSpec, ModelSpec, Query,
    QueryTarget, Regime, RegimeTable, VariableId, WeakEdgeKind, WeakEdgeSpec,
};
use crate::response::ResponseSpace;

/// Largest block the builder will enumerate (a full four-variable margin).
pub const MAX_BLOCK_SIZE: u64 = 1 << 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub margin_id: usize,
    pub scope: Assignment,
    pub offset: usize,
    pub len: usize,
}

/// Placement of every (margin, scope value) block in the decision vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaLayout {
    pub blocks: Vec<Block>,
    pub total_dim: usize,
}

impl ThetaLayout {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for m in &spec.margins {
            let len = ResponseSpace::new(m)?.enumerable_size(MAX_BLOCK_SIZE)?;
            for scope in m.scope_assignments() {
                blocks.push(Block {
                    margin_id: m.id,
                    scope,
                    offset,
                    len,
                });
                offset += len;
            }
        }
        Ok(Self {
            blocks,
            total_dim: offset,
        })
    }

    pub fn block_index(&self, margin_id: usize, scope: &Assignment) -> Option<usize> {
        self.blocks
            .iter()
            .position(|b| b.margin_id == margin_id && &b.scope == scope)
    }

    pub fn block(&self, margin_id: usize, scope: &Assignment) -> Option<&Block> {
        self.block_index(margin_id, scope).map(|i| &self.blocks[i])
    }

    /// `t<block>_<index>` name of a global coordinate.
    pub fn var_name(&self, global: usize) -> String {
        let b = self
            .blocks
            .partition_point(|b| b.offset + b.len <= global);
        format!("t{}_{}", b, global - self.blocks[b].offset)
    }
}

/// Sparse affine expression `Σ coef·θ[idx] + constant`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    /// Builds an expression, merging duplicate indices and dropping zeros.
    pub fn new(mut terms: Vec<(usize, f64)>, constant: f64) -> Self {
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (i, c) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => merged.push((i, c)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        Self {
            terms: merged,
            constant,
        }
    }

    /// `self + scale·other`.
    pub fn add_scaled(&self, other: &LinExpr, scale: f64) -> LinExpr {
        let mut out = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() || j < other.terms.len() {
            let a = self.terms.get(i);
            let b = other.terms.get(j);
            match (a, b) {
                (Some(&(ia, ca)), Some(&(ib, cb))) if ia == ib => {
                    out.push((ia, ca + scale * cb));
                    i += 1;
                    j += 1;
                }
                (Some(&(ia, ca)), Some(&(ib, _))) if ia < ib => {
                    out.push((ia, ca));
                    i += 1;
                }
                (Some(&(ia, ca)), None) => {
                    out.push((ia, ca));
                    i += 1;
                }
                (_, Some(&(ib, cb))) => {
                    out.push((ib, scale * cb));
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        out.retain(|t| t.1 != 0.0);
        LinExpr {
            terms: out,
            constant: self.constant + scale * other.constant,
        }
    }

    pub fn sub(&self, other: &LinExpr) -> LinExpr {
        self.add_scaled(other, -1.0)
    }

    pub fn scaled(&self, s: f64) -> LinExpr {
        LinExpr {
            terms: self
                .terms
                .iter()
                .map(|&(i, c)| (i, c * s))
                .filter(|t| t.1 != 0.0)
                .collect(),
            constant: self.constant * s,
        }
    }

    pub fn plus_constant(mut self, c: f64) -> LinExpr {
        self.constant += c;
        self
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|&(i, c)| c * theta[i])
            .sum::<f64>()
            + self.constant
    }

    pub fn max_index(&self) -> Option<usize> {
        self.terms.last().map(|t| t.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    /// `expr = 0`
    Eq,
    /// `expr <= 0`
    Le,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub expr: LinExpr,
    pub relation: Relation,
    pub tag: String,
}

impl Constraint {
    pub fn eq(expr: LinExpr, tag: String) -> Self {
        Self {
            expr,
            relation: Relation::Eq,
            tag,
        }
    }

    pub fn le(expr: LinExpr, tag: String) -> Self {
        Self {
            expr,
            relation: Relation::Le,
            tag,
        }
    }

    /// Amount by which `theta` violates the constraint (0 when satisfied).
    pub fn violation(&self, theta: &[f64]) -> f64 {
        let v = self.expr.eval(theta);
        match self.relation {
            Relation::Eq => v.abs(),
            Relation::Le => v.max(0.0),
        }
    }

    pub fn is_bound(&self) -> bool {
        self.tag.starts_with("nonneg:")
    }
}

/// Tag prefix identifying the assumption a constraint encodes. Coherence
/// groups by margin pair, weak edges by edge and margin, data bindings by
/// margin and table.
pub fn tag_group(tag: &str) -> String {
    let parts: Vec<&str> = tag.split(':').collect();
    let keep = match parts[0] {
        "coherence" | "simplex" | "nonneg" => 2,
        _ => parts
            .iter()
            .position(|p| p.starts_with("v=") || p.starts_with("pa=") || p.starts_with("s="))
            .unwrap_or(parts.len()),
    };
    parts[..keep.min(parts.len())].join(":")
}

/// A constraint instance the builder could not emit, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub tag: String,
    pub reason: String,
}

impl fmt::Display for Skipped {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.tag, self.reason)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
    pub skipped: Vec<Skipped>,
}

impl ConstraintSet {
    pub fn extend(&mut self, other: ConstraintSet) {
        self.constraints.extend(other.constraints);
        self.skipped.extend(other.skipped);
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }
}

/// A margin's response space together with its block offsets.
#[derive(Clone, Debug)]
pub struct MarginBlocks {
    pub space: ResponseSpace,
    pub blocks: Vec<(Assignment, usize)>,
    size: usize,
}

impl MarginBlocks {
    pub fn new(layout: &ThetaLayout, margin: &MarginSpec) -> Result<Self> {
        let space = ResponseSpace::new(margin)?;
        let size = space.enumerable_size(MAX_BLOCK_SIZE)?;
        let blocks = layout
            .blocks
            .iter()
            .filter(|b| b.margin_id == margin.id)
            .map(|b| (b.scope.clone(), b.offset))
            .collect();
        Ok(Self {
            space,
            blocks,
            size,
        })
    }

    pub fn margin(&self) -> &MarginSpec {
        &self.space.margin
    }

    pub fn offset(&self, scope: &Assignment) -> Result<usize> {
        self.blocks
            .iter()
            .find(|(s, _)| s == scope)
            .map(|(_, o)| *o)
            .ok_or_else(|| {
                Error::InvalidModel(format!(
                    "scope value {scope} is not in the scope of {}",
                    self.margin().name()
                ))
            })
    }

    /// Local outcome bits of every joint response under `regime`.
    pub fn outcomes(&self, regime: &Regime) -> Result<Vec<usize>> {
        let (mask, bits) = self.space.local_forcing(regime)?;
        Ok((0..self.size as u64)
            .map(|r| self.space.propagate_local(r, mask, bits))
            .collect())
    }

    fn local_event(&self, event: &Assignment) -> Result<(usize, usize)> {
        self.space.local_forcing(&Regime::from_assignment(event.clone()))
    }

    fn expr_from_outcomes(outcomes: &[usize], offset: usize, event: (usize, usize)) -> LinExpr {
        let (mask, bits) = event;
        LinExpr {
            terms: outcomes
                .iter()
                .enumerate()
                .filter(|(_, &o)| o & mask == bits)
                .map(|(r, _)| (offset + r, 1.0))
                .collect(),
            constant: 0.0,
        }
    }

    /// `P_margin(event | scope, regime)` as a linear expression in the block.
    pub fn implied(&self, scope: &Assignment, regime: &Regime, event: &Assignment) -> Result<LinExpr> {
        let offset = self.offset(scope)?;
        let outcomes = self.outcomes(regime)?;
        Ok(Self::expr_from_outcomes(&outcomes, offset, self.local_event(event)?))
    }
}

/// `Σ_r θ[r]·1(propagate(r, regime) agrees with event)` over one block.
pub fn implied_prob_expr(
    layout: &ThetaLayout,
    margin: &MarginSpec,
    scope_value: &Assignment,
    regime: &Regime,
    event: &Assignment,
) -> Result<LinExpr> {
    MarginBlocks::new(layout, margin)?.implied(scope_value, regime, event)
}

fn scope_suffix(scope: &Assignment) -> String {
    if scope.is_empty() {
        String::new()
    } else {
        format!(":s={scope}")
    }
}

/// One `Σθ = 1` row per block plus `θ ≥ 0` for every coordinate.
pub fn simplex_constraints(layout: &ThetaLayout) -> ConstraintSet {
    let mut out = ConstraintSet::default();
    for b in &layout.blocks {
        let expr = LinExpr {
            terms: (b.offset..b.offset + b.len).map(|i| (i, 1.0)).collect(),
            constant: -1.0,
        };
        out.constraints.push(Constraint::eq(
            expr,
            format!("simplex:M{}{}", b.margin_id, scope_suffix(&b.scope)),
        ));
    }
    for b in &layout.blocks {
        for i in 0..b.len {
            out.constraints.push(Constraint::le(
                LinExpr {
                    terms: vec![(b.offset + i, -1.0)],
                    constant: 0.0,
                },
                format!("nonneg:M{}:{}", b.margin_id, layout.var_name(b.offset + i)),
            ));
        }
    }
    out
}

/// Match the margin's implied distributions to every table whose regime
/// intervenes only on margin variables.
pub fn data_binding_constraints(
    blocks: &MarginBlocks,
    scope_value: &Assignment,
    tables: &[RegimeTable],
) -> Result<ConstraintSet> {
    let margin = blocks.margin();
    let offset = blocks.offset(scope_value)?;
    let mut out = ConstraintSet::default();
    for (t_idx, table) in tables.iter().enumerate() {
        let regime = &table.regime;
        if !regime.intervenes_only_within(&margin.vars) {
            continue;
        }
        let tag_base = format!("binding:{}:{}#t{}", margin.name(), regime, t_idx);
        let p_scope = table.marginal(scope_value);
        if p_scope <= 0.0 {
            out.skipped.push(Skipped {
                tag: format!("{tag_base}{}", scope_suffix(scope_value)),
                reason: "zero-probability scope value".into(),
            });
            continue;
        }
        let free: Vec<VariableId> = margin
            .vars
            .iter()
            .copied()
            .filter(|v| !regime.intervenes_on(*v))
            .collect();
        let outcomes = blocks.outcomes(regime)?;
        for w in Assignment::all_over(&free) {
            let joint = w.merge(scope_value)?;
            let c = table.marginal(&joint) / p_scope;
            let expr = MarginBlocks::expr_from_outcomes(&outcomes, offset, blocks.local_event(&w)?);
            out.constraints.push(Constraint::eq(
                expr.plus_constant(-c),
                format!("{tag_base}:v={w}{}", scope_suffix(scope_value)),
            ));
        }
    }
    Ok(out)
}

fn shared_scopes(a: &MarginBlocks, b: &MarginBlocks) -> Vec<Assignment> {
    a.blocks
        .iter()
        .map(|(s, _)| s.clone())
        .filter(|s| b.blocks.iter().any(|(t, _)| t == s))
        .collect()
}

/// Equal submarginals on `overlap` in every regime intervening on a proper
/// subset of the overlap.
pub fn coherence_constraints(
    a: &MarginBlocks,
    b: &MarginBlocks,
    overlap: &[VariableId],
) -> Result<ConstraintSet> {
    let (ma, mb) = (a.margin(), b.margin());
    if ma.scope_vars != mb.scope_vars {
        return Err(Error::ScopeMismatch { a: ma.id, b: mb.id });
    }
    if !overlap.iter().all(|v| ma.contains(*v) && mb.contains(*v)) {
        return Err(Error::InvalidModel(format!(
            "overlap not contained in intersection of {} and {}",
            ma.name(),
            mb.name()
        )));
    }
    let mut overlap = overlap.to_vec();
    overlap.sort_unstable();
    overlap.dedup();
    let mut out = ConstraintSet::default();
    let scopes = shared_scopes(a, b);
    let k = overlap.len();
    for subset in 0..(1usize << k) {
        if subset == (1 << k) - 1 {
            continue;
        }
        let forced: Vec<VariableId> = (0..k).filter(|t| subset >> t & 1 == 1).map(|t| overlap[t]).collect();
        let free: Vec<VariableId> = (0..k).filter(|t| subset >> t & 1 == 0).map(|t| overlap[t]).collect();
        for d in Assignment::all_over(&forced) {
            let regime = Regime::from_assignment(d);
            let out_a = a.outcomes(&regime)?;
            let out_b = b.outcomes(&regime)?;
            for o in Assignment::all_over(&free) {
                let ev_a = a.local_event(&o)?;
                let ev_b = b.local_event(&o)?;
                for s in &scopes {
                    let ea = MarginBlocks::expr_from_outcomes(&out_a, a.offset(s)?, ev_a);
                    let eb = MarginBlocks::expr_from_outcomes(&out_b, b.offset(s)?, ev_b);
                    let diff = ea.sub(&eb);
                    if diff.terms.is_empty() {
                        continue;
                    }
                    out.constraints.push(Constraint::eq(
                        diff,
                        format!(
                            "coherence:{}~{}:{}:v={}{}",
                            ma.name(),
                            mb.name(),
                            regime,
                            o,
                            scope_suffix(s)
                        ),
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// Within-margin parents of `var` (all earlier margin variables).
fn margin_parents(margin: &MarginSpec, var: VariableId) -> Vec<VariableId> {
    margin.vars.iter().copied().filter(|v| *v < var).collect()
}

fn check_edge_in_margin(margin: &MarginSpec, edge: &WeakEdgeSpec) -> Result<()> {
    if !(margin.contains(edge.from) && margin.contains(edge.to)) || edge.from >= edge.to {
        return Err(Error::InvalidModel(format!(
            "weak edge {} does not point down causal order inside {}",
            edge.label(),
            margin.name()
        )));
    }
    Ok(())
}

fn push_abs_le(out: &mut ConstraintSet, diff: LinExpr, epsilon: f64, tag: String) {
    out.constraints
        .push(Constraint::le(diff.clone().plus_constant(-epsilon), format!("{tag}:upper")));
    out.constraints
        .push(Constraint::le(diff.scaled(-1.0).plus_constant(-epsilon), format!("{tag}:lower")));
}

/// Assignments of the other parents and the interventional contrast on the
/// child for each, as `(parent assignment, scope, contrast)` triples.
pub(crate) fn directed_contrasts(
    blocks: &MarginBlocks,
    edge: &WeakEdgeSpec,
) -> Result<Vec<(Assignment, Assignment, LinExpr)>> {
    let margin = blocks.margin();
    check_edge_in_margin(margin, edge)?;
    let (j, i) = (edge.from, edge.to);
    let others: Vec<VariableId> = margin_parents(margin, i).into_iter().filter(|v| *v != j).collect();
    let child_on = Assignment::new([(i, 1)])?;
    let mut out = Vec::new();
    for v in Assignment::all_over(&others) {
        let hi = Regime::from_assignment(v.merge(&Assignment::new([(j, 1)])?)?);
        let lo = Regime::from_assignment(v.merge(&Assignment::new([(j, 0)])?)?);
        let out_hi = blocks.outcomes(&hi)?;
        let out_lo = blocks.outcomes(&lo)?;
        let ev = blocks.local_event(&child_on)?;
        for (s, offset) in &blocks.blocks {
            let diff = MarginBlocks::expr_from_outcomes(&out_hi, *offset, ev)
                .sub(&MarginBlocks::expr_from_outcomes(&out_lo, *offset, ev));
            out.push((v.clone(), s.clone(), diff));
        }
    }
    Ok(out)
}

/// `|P(i=1 | do(v, j=1)) - P(i=1 | do(v, j=0))| ≤ ε` for every assignment `v`
/// of the child's other parents.
pub fn weak_directed_constraints(
    blocks: &MarginBlocks,
    edge: &WeakEdgeSpec,
    epsilon: f64,
) -> Result<ConstraintSet> {
    let mut out = ConstraintSet::default();
    for (v, s, diff) in directed_contrasts(blocks, edge)? {
        let tag = format!(
            "weak-dir:{}:{}->{}:pa={}{}",
            blocks.margin().name(),
            edge.from,
            edge.to,
            v,
            scope_suffix(&s)
        );
        push_abs_le(&mut out, diff, epsilon, tag);
    }
    Ok(out)
}

/// One term of the bidirected family: the interventional expression and the
/// data-derived conditional it is compared against.
pub(crate) struct BidirectedTerm {
    pub parents: Assignment,
    pub source_value: u8,
    pub scope: Assignment,
    pub expr: LinExpr,
    pub conditional: Option<f64>,
}

/// Union of the pair's within-margin parents, minus the pair itself.
pub fn bidirected_parent_set(margin: &MarginSpec, edge: &WeakEdgeSpec) -> Vec<VariableId> {
    let mut pa: Vec<VariableId> = margin_parents(margin, edge.to)
        .into_iter()
        .chain(margin_parents(margin, edge.from))
        .filter(|v| *v != edge.from && *v != edge.to)
        .collect();
    pa.sort_unstable();
    pa.dedup();
    pa
}

/// Enumerates the bidirected family. `lookup` supplies the table for a
/// regime, or `None` when the regime is not available.
pub(crate) fn bidirected_terms<'t>(
    blocks: &MarginBlocks,
    edge: &WeakEdgeSpec,
    lookup: impl Fn(&Regime) -> Option<&'t RegimeTable>,
) -> Result<Vec<BidirectedTerm>> {
    let margin = blocks.margin();
    check_edge_in_margin(margin, edge)?;
    if !(edge.condition_on_ancestors.is_empty() || edge.condition_on_ancestors == margin.scope_vars) {
        return Err(Error::UnsupportedConditioning {
            margin: margin.id,
            edge: edge.label(),
        });
    }
    let (j, i) = (edge.from, edge.to);
    let pa = bidirected_parent_set(margin, edge);
    let child_on = Assignment::new([(i, 1)])?;
    let ev = blocks.local_event(&child_on)?;
    let mut out = Vec::new();
    for v in Assignment::all_over(&pa) {
        let data_regime = Regime::from_assignment(v.clone());
        let table = lookup(&data_regime).ok_or_else(|| Error::RegimeNotInData {
            margin: margin.id,
            edge: edge.label(),
            regime: data_regime.clone(),
        })?;
        for vj in 0..=1u8 {
            let source = Assignment::new([(j, vj)])?;
            let outcomes = blocks.outcomes(&Regime::from_assignment(v.merge(&source)?))?;
            for (s, offset) in &blocks.blocks {
                let given = source.merge(s)?;
                out.push(BidirectedTerm {
                    parents: v.clone(),
                    source_value: vj,
                    scope: s.clone(),
                    expr: MarginBlocks::expr_from_outcomes(&outcomes, *offset, ev),
                    conditional: table.conditional(&child_on, &given),
                });
            }
        }
    }
    Ok(out)
}

/// Find the first table for exactly this regime.
pub fn find_table<'t>(tables: &'t [RegimeTable], regime: &Regime) -> Option<&'t RegimeTable> {
    tables.iter().find(|t| &t.regime == regime)
}

/// `|P(i=1 | do(v), do(j=vj)) - P(i=1 | j=vj, do(v))| ≤ ε` where the second
/// term is read from the table for `do(v)`.
pub fn weak_bidirected_constraints(
    blocks: &MarginBlocks,
    edge: &WeakEdgeSpec,
    epsilon: f64,
    tables: &[RegimeTable],
) -> Result<ConstraintSet> {
    let mut out = ConstraintSet::default();
    for term in bidirected_terms(blocks, edge, |r| find_table(tables, r))? {
        let tag = format!(
            "weak-bidir:{}:{}<->{}:pa={}:vj={}{}",
            blocks.margin().name(),
            edge.from,
            edge.to,
            term.parents,
            term.source_value,
            scope_suffix(&term.scope)
        );
        match term.conditional {
            Some(c) => push_abs_le(&mut out, term.expr.plus_constant(-c), epsilon, tag),
            None => out.skipped.push(Skipped {
                tag,
                reason: "zero-probability conditioning event".into(),
            }),
        }
    }
    Ok(out)
}

/// Linear program over the decision vector. All variables are nonnegative;
/// rows are `expr = 0` or `expr ≤ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub n_vars: usize,
    pub objective: LinExpr,
    pub equalities: Vec<Constraint>,
    pub inequalities: Vec<Constraint>,
    /// Start of each parameter block, used only for variable names.
    #[serde(default)]
    pub block_offsets: Vec<usize>,
}

impl LinearProgram {
    pub fn new(n_vars: usize, objective: LinExpr) -> Self {
        Self {
            n_vars,
            objective,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            block_offsets: Vec::new(),
        }
    }

    /// `t<block>_<index>`; a program without blocks is one block.
    pub fn var_name(&self, i: usize) -> String {
        let b = self.block_offsets.partition_point(|&o| o <= i).saturating_sub(1);
        let start = self.block_offsets.get(b).copied().unwrap_or(0);
        format!("t{}_{}", b, i - start)
    }

    /// Adds constraints, turning `nonneg:` rows into the implicit bounds.
    pub fn add_constraints(&mut self, constraints: impl IntoIterator<Item = Constraint>) {
        for c in constraints {
            if c.is_bound() {
                continue;
            }
            match c.relation {
                Relation::Eq => self.equalities.push(c),
                Relation::Le => self.inequalities.push(c),
            }
        }
    }

    pub fn with_objective(&self, objective: LinExpr) -> Self {
        Self {
            objective,
            ..self.clone()
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &Constraint> {
        self.equalities.iter().chain(&self.inequalities)
    }

    /// Every row plus a `nonneg:` bound per variable.
    pub fn all_constraints(&self) -> Vec<Constraint> {
        let mut out: Vec<Constraint> = self.rows().cloned().collect();
        out.extend((0..self.n_vars).map(|i| {
            Constraint::le(
                LinExpr {
                    terms: vec![(i, -1.0)],
                    constant: 0.0,
                },
                format!("nonneg:x{i}"),
            )
        }));
        out
    }

    pub fn check_indices(&self) -> Result<()> {
        let bad = self
            .rows()
            .map(|c| &c.expr)
            .chain(std::iter::once(&self.objective))
            .any(|e| e.max_index().is_some_and(|i| i >= self.n_vars));
        if bad {
            return Err(Error::InvalidModel("expression index beyond n_vars".into()));
        }
        Ok(())
    }
}

/// Query-independent part of a model: layout plus every constraint.
#[derive(Clone, Debug)]
pub struct BuiltModel {
    pub spec: ModelSpec,
    pub layout: ThetaLayout,
    pub constraints: ConstraintSet,
}

impl BuiltModel {
    /// LP over the model's constraints with the given objective.
    pub fn program(&self, objective: LinExpr) -> LinearProgram {
        let mut lp = LinearProgram::new(self.layout.total_dim, objective);
        lp.block_offsets = self.layout.blocks.iter().map(|b| b.offset).collect();
        lp.add_constraints(self.constraints.constraints.iter().cloned());
        lp
    }

    pub fn blocks(&self, margin_id: usize) -> Result<MarginBlocks> {
        MarginBlocks::new(&self.layout, self.spec.margin(margin_id)?)
    }
}

fn check_tables(spec: &ModelSpec, tables: &[RegimeTable]) -> Result<()> {
    for (k, t) in tables.iter().enumerate() {
        if t.probs.len() != 1usize << spec.n_vars {
            return Err(Error::InvalidModel(format!(
                "table {k} ({}) has {} entries, expected 2^{}",
                t.regime,
                t.probs.len(),
                spec.n_vars
            )));
        }
        let problems = t.check();
        if !problems.is_empty() {
            return Err(Error::InvalidModel(format!("table {k} ({}): {}", t.regime, problems.join("; "))));
        }
    }
    Ok(())
}

/// Simplex, data-binding, coherence and weak-edge constraints for a model.
pub fn build_model(spec: &ModelSpec, tables: &[RegimeTable]) -> Result<BuiltModel> {
    let diags = validate_model(spec);
    if !diags.is_empty() {
        let msg: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(Error::InvalidModel(msg.join("; ")));
    }
    check_tables(spec, tables)?;
    let layout = ThetaLayout::new(spec)?;
    let margin_blocks = spec
        .margins
        .iter()
        .map(|m| MarginBlocks::new(&layout, m))
        .collect::<Result<Vec<_>>>()?;
    let by_id = |id: usize| -> &MarginBlocks {
        let pos = spec.margins.iter().position(|m| m.id == id).expect("validated id");
        &margin_blocks[pos]
    };

    let mut set = simplex_constraints(&layout);
    for mb in &margin_blocks {
        for (scope, _) in &mb.blocks {
            set.extend(data_binding_constraints(mb, scope, tables)?);
        }
    }
    for pair in &spec.coherence_pairs {
        set.extend(coherence_constraints(by_id(pair.a), by_id(pair.b), &pair.overlap)?);
    }
    for decl in &spec.weak_edges {
        for id in &decl.margins {
            let mb = by_id(*id);
            let part = match decl.edge.kind {
                WeakEdgeKind::Directed => weak_directed_constraints(mb, &decl.edge, decl.edge.epsilon)?,
                WeakEdgeKind::Bidirected => {
                    weak_bidirected_constraints(mb, &decl.edge, decl.edge.epsilon, tables)?
                }
            };
            set.extend(part);
        }
    }
    Ok(BuiltModel {
        spec: spec.clone(),
        layout,
        constraints: set,
    })
}

/// Linear objective for a query, plus the id of the margin it is read from.
pub fn query_objective(
    built: &BuiltModel,
    tables: &[RegimeTable],
    query: &Query,
) -> Result<(LinExpr, usize)> {
    query.check()?;
    let margin = select_margin_for_query(&built.spec, query)?;
    let blocks = built.blocks(margin.id)?;

    // For a scoped margin, average the per-scope quantity with observational
    // scope weights; scope variables precede the margin so interventions on
    // margin variables leave their distribution unchanged.
    let weights: Vec<(Assignment, f64)> = if margin.scope_vars.is_empty() {
        vec![(Assignment::empty(), 1.0)]
    } else {
        let obs = find_table(tables, &Regime::observational()).ok_or_else(|| {
            Error::InvalidQuery(format!(
                "query on scoped margin {} needs an observational table for scope weights",
                margin.name()
            ))
        })?;
        let w: Vec<_> = blocks
            .blocks
            .iter()
            .map(|(s, _)| (s.clone(), obs.marginal(s)))
            .collect();
        let covered: f64 = w.iter().map(|x| x.1).sum();
        if (covered - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidQuery(format!(
                "scope of {} covers only {covered} of the observational mass",
                margin.name()
            )));
        }
        w
    };

    let single = |regime: &Regime, event: &Assignment| -> Result<LinExpr> {
        let mut acc = LinExpr::default();
        for (s, w) in &weights {
            if *w > 0.0 {
                acc = acc.add_scaled(&blocks.implied(s, regime, event)?, *w);
            }
        }
        Ok(acc)
    };

    let expr = match &query.target {
        QueryTarget::Prob {
            target,
            value,
            regime,
        } => single(regime, &Assignment::new([(*target, *value)])?)?,
        QueryTarget::Ate {
            target,
            treatment,
            base,
        } => {
            let ev = Assignment::new([(*target, 1)])?;
            let on = base.merge(&Regime::new([(*treatment, 1)])?)?;
            let off = base.merge(&Regime::new([(*treatment, 0)])?)?;
            single(&on, &ev)?.sub(&single(&off, &ev)?)
        }
    };
    Ok((expr, margin.id))
}

/// Full program for one query: objective plus every model constraint.
pub fn assemble_lp(spec: &ModelSpec, tables: &[RegimeTable], query: &Query) -> Result<LinearProgram> {
    let built = build_model(spec, tables)?;
    let (objective, _) = query_objective(&built, tables, query)?;
    Ok(built.program(objective))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoherencePair, Provenance, WeakEdgeDecl};

    fn v(i: usize) -> VariableId {
        VariableId(i)
    }

    fn single_margin(vars: &[usize]) -> (ThetaLayout, MarginBlocks) {
        let spec = ModelSpec {
            n_vars: vars.iter().max().unwrap() + 1,
            margins: vec![MarginSpec::new(1, vars.iter().copied())],
            coherence_pairs: vec![],
            weak_edges: vec![],
            regimes_available: vec![],
        };
        let layout = ThetaLayout::new(&spec).unwrap();
        let mb = MarginBlocks::new(&layout, &spec.margins[0]).unwrap();
        (layout, mb)
    }

    #[test]
    fn empty_event_sums_whole_block() {
        let (_, mb) = single_margin(&[0, 1, 2]);
        let e = mb
            .implied(&Assignment::empty(), &Regime::observational(), &Assignment::empty())
            .unwrap();
        assert_eq!(e.terms.len(), 128);
        assert!(e.terms.iter().all(|t| t.1 == 1.0));
    }

    #[test]
    fn two_var_intervened_event_matches_enumeration() {
        let (_, mb) = single_margin(&[0, 1]);
        let do_a1 = Regime::new([(v(0), 1)]).unwrap();
        let e = mb
            .implied(&Assignment::empty(), &do_a1, &Assignment::new([(v(1), 1)]).unwrap())
            .unwrap();
        // Independent enumeration: joint index r = fa | fb << 1; B = bit 1 of fb.
        let expected: Vec<usize> = (0..8).filter(|r| (r >> 1) & 0b10 != 0).collect();
        let got: Vec<usize> = e.terms.iter().map(|t| t.0).collect();
        assert_eq!(got, expected);
        assert_eq!(got.len(), 4);
        let contradiction = mb
            .implied(&Assignment::empty(), &do_a1, &Assignment::new([(v(0), 0)]).unwrap())
            .unwrap();
        assert!(contradiction.terms.is_empty());
    }

    #[test]
    fn full_events_partition_each_regime() {
        let (_, mb) = single_margin(&[0, 2, 3]);
        for regime in ["do()", "do(X1=1)", "do(X3=0,X4=1)"] {
            let regime: Regime = regime.parse().unwrap();
            let mut acc = LinExpr::default();
            for w in Assignment::all_over(&mb.margin().vars.clone()) {
                acc = acc.add_scaled(&mb.implied(&Assignment::empty(), &regime, &w).unwrap(), 1.0);
            }
            assert_eq!(acc.terms.len(), 128);
            assert!(acc.terms.iter().all(|t| t.1 == 1.0));
        }
    }

    #[test]
    fn simplex_rows_per_block() {
        let spec = ModelSpec {
            n_vars: 3,
            margins: vec![MarginSpec::new(1, [0, 1, 2])],
            coherence_pairs: vec![],
            weak_edges: vec![],
            regimes_available: vec![],
        };
        let set = simplex_constraints(&ThetaLayout::new(&spec).unwrap());
        assert_eq!(set.constraints.iter().filter(|c| c.relation == Relation::Eq).count(), 1);
        assert_eq!(set.constraints.iter().filter(|c| c.is_bound()).count(), 128);

        let scoped = ModelSpec {
            n_vars: 3,
            margins: vec![MarginSpec::new(1, [1, 2]).with_scope(vec![v(0)], vec![vec![0], vec![1]])],
            ..spec.clone()
        };
        let set = simplex_constraints(&ThetaLayout::new(&scoped).unwrap());
        assert_eq!(set.constraints.iter().filter(|c| c.relation == Relation::Eq).count(), 2);

        let empty = ModelSpec {
            n_vars: 1,
            margins: vec![],
            ..spec
        };
        assert!(simplex_constraints(&ThetaLayout::new(&empty).unwrap()).is_empty());
    }

    #[test]
    fn point_mass_binding_on_one_var_margin() {
        let (_, mb) = single_margin(&[0]);
        let table = RegimeTable {
            regime: Regime::observational(),
            probs: vec![0.0, 1.0],
            provenance: Provenance::Exact,
        };
        let set = data_binding_constraints(&mb, &Assignment::empty(), &[table]).unwrap();
        assert_eq!(set.len(), 2);
        // θ = (0, 1): response index 1 is the constant-one function.
        let theta = [0.0, 1.0];
        assert!(set.constraints.iter().all(|c| c.violation(&theta) == 0.0));
        assert!(data_binding_constraints(&mb, &Assignment::empty(), &[]).unwrap().is_empty());
    }

    #[test]
    fn coherence_on_two_var_overlap_counts() {
        let spec = ModelSpec {
            n_vars: 4,
            margins: vec![MarginSpec::new(1, [0, 1, 2]), MarginSpec::new(2, [0, 1, 3])],
            coherence_pairs: vec![],
            weak_edges: vec![],
            regimes_available: vec![],
        };
        let layout = ThetaLayout::new(&spec).unwrap();
        let a = MarginBlocks::new(&layout, &spec.margins[0]).unwrap();
        let b = MarginBlocks::new(&layout, &spec.margins[1]).unwrap();
        let set = coherence_constraints(&a, &b, &[v(0), v(1)]).unwrap();
        // Enumerate (D ⊊ O, d, o) triples directly: D=∅ gives 4 events,
        // D={X1} and D={X2} each 2 regimes × 2 events.
        let mut expected = 0;
        for d_mask in 0..3usize {
            let d = d_mask.count_ones();
            expected += (1 << d) * (1 << (2 - d));
        }
        assert_eq!(expected, 12);
        assert_eq!(set.len(), expected);

        let single = coherence_constraints(&a, &b, &[v(1)]).unwrap();
        assert_eq!(single.len(), 2);
        assert!(single.constraints.iter().all(|c| c.tag.contains("do()")));

        let selfpair = coherence_constraints(&a, &a, &[v(0), v(1)]).unwrap();
        assert!(selfpair.is_empty());
    }

    #[test]
    fn coherence_rejects_scope_mismatch() {
        let spec = ModelSpec {
            n_vars: 4,
            margins: vec![
                MarginSpec::new(1, [1, 2]).with_scope(vec![v(0)], vec![vec![0]]),
                MarginSpec::new(2, [1, 3]),
            ],
            coherence_pairs: vec![],
            weak_edges: vec![],
            regimes_available: vec![],
        };
        let layout = ThetaLayout::new(&spec).unwrap();
        let a = MarginBlocks::new(&layout, &spec.margins[0]).unwrap();
        let b = MarginBlocks::new(&layout, &spec.margins[1]).unwrap();
        assert!(matches!(
            coherence_constraints(&a, &b, &[v(1)]),
            Err(Error::ScopeMismatch { a: 1, b: 2 })
        ));
    }

    #[test]
    fn weak_directed_counts_and_tags() {
        let (_, mb) = single_margin(&[0, 1, 3]);
        let set = weak_directed_constraints(&mb, &WeakEdgeSpec::directed(0, 3, 0.03), 0.03).unwrap();
        assert_eq!(set.len(), 4);
        assert!(set.constraints.iter().all(|c| c.tag.starts_with("weak-dir:M1:X1->X4:pa=")));
    }

    #[test]
    fn weak_bidirected_needs_parent_regimes() {
        let (_, mb) = single_margin(&[0, 1, 3]);
        let edge = WeakEdgeSpec::bidirected(0, 3, 0.2);
        assert_eq!(bidirected_parent_set(mb.margin(), &edge), vec![v(1)]);
        let mk = |regime: &str| RegimeTable {
            regime: regime.parse().unwrap(),
            probs: {
                // uniform over assignments consistent with the regime
                let r: Regime = regime.parse().unwrap();
                let (mask, bits) = r.interventions.mask_bits();
                let n_ok = (0..16).filter(|j| j & mask == bits).count() as f64;
                (0..16).map(|j| if j & mask == bits { 1.0 / n_ok } else { 0.0 }).collect()
            },
            provenance: Provenance::Exact,
        };
        let tables = vec![mk("do()"), mk("do(X2=0)"), mk("do(X2=1)")];
        let set = weak_bidirected_constraints(&mb, &edge, 0.2, &tables).unwrap();
        assert_eq!(set.len(), 8);
        let missing = weak_bidirected_constraints(&mb, &edge, 0.2, &tables[..1]);
        assert!(matches!(missing, Err(Error::RegimeNotInData { .. })));
    }

    #[test]
    fn assembled_program_size_for_four_margins() {
        let opts = crate::presets::N4Options { coherence: true, ..Default::default() };
        let spec = crate::presets::paper_n4_model(&opts);
        let tables = crate::presets::uniform_tables(4, &crate::presets::paper_n4_regimes());
        let q: Query = "P(X4=1|do(X1=0))".parse().unwrap();
        let lp = assemble_lp(&spec, &tables, &q).unwrap();
        assert_eq!(lp.n_vars, 512);
        assert!(lp.equalities.iter().any(|c| c.tag.starts_with("coherence:")));
        let bad: Query = "P(X6=1)".parse().unwrap();
        assert!(matches!(assemble_lp(&spec, &tables, &bad), Err(Error::NoEligibleMargin(_))));
    }

    #[test]
    fn tag_groups() {
        assert_eq!(tag_group("binding:M1:do(X2=0)#t3:v=X1=0,X3=1"), "binding:M1:do(X2=0)#t3");
        assert_eq!(tag_group("coherence:M1~M2:do(X1=0):v=X2=1"), "coherence:M1~M2");
        assert_eq!(tag_group("weak-bidir:M2:X1<->X4:pa=X2=0:vj=1:upper"), "weak-bidir:M2:X1<->X4");
        assert_eq!(tag_group("weak-dir:M2:X1->X4:pa=X2=1:lower"), "weak-dir:M2:X1->X4");
    }

    #[test]
    fn lin_expr_merges_duplicates() {
        let e = LinExpr::new(vec![(3, 1.0), (1, 2.0), (3, -1.0), (2, 0.5)], 0.0);
        assert_eq!(e.terms, vec![(1, 2.0), (2, 0.5)]);
        let d = e.sub(&LinExpr::new(vec![(2, 0.5), (4, 1.0)], 1.0));
        assert_eq!(d.terms, vec![(1, 2.0), (4, -1.0)]);
        assert_eq!(d.constant, -1.0);
    }

    #[test]
    fn scoped_weak_edge_is_emitted_per_block() {
        let spec = ModelSpec {
            n_vars: 3,
            margins: vec![MarginSpec::new(1, [1, 2]).with_scope(vec![v(0)], vec![vec![0], vec![1]])],
            coherence_pairs: vec![CoherencePair {
                a: 1,
                b: 1,
                overlap: vec![v(1)],
            }],
            weak_edges: vec![WeakEdgeDecl {
                edge: WeakEdgeSpec::directed(1, 2, 0.5),
                margins: vec![1],
            }],
            regimes_available: vec![],
        };
        let built = build_model(&spec, &[]).unwrap();
        let weak = built
            .constraints
            .constraints
            .iter()
            .filter(|c| c.tag.starts_with("weak-dir"))
            .count();
        assert_eq!(weak, 4);
    }
}
