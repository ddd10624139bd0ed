//! Ground-truth structural causal models for testing and experiments.
//!
//! Variables follow the causal order `X1 < X2 < ... < Xn` with every earlier
//! variable a parent (fully connected DAG). Exogenous noise is `c` shared
//! confounder bits plus one private bit per variable, all uniform, so every
//! pair of variables is confounded and all distributions can be computed by
//! enumerating the `2^(c+n)` exogenous configurations.
//!
//! The truth table of `X_{i+1}` (index `i`) has `i + c + 1` inputs: bit `t < i`
//! is parent `t`, bits `i..i+c` are the shared bits, bit `i+c` the private bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{bidirected_parent_set, bidirected_terms, directed_contrasts, MarginBlocks, ThetaLayout};
use crate::error::{Error, Result};
use crate::model::{
    Assignment, MarginSpec, ModelSpec, Provenance, Query, QueryTarget, Regime, RegimeTable,
    WeakEdgeKind, WeakEdgeSpec,
};
use crate::response::ResponseSpace;

pub const MAX_SCM_VARS: usize = 10;
pub const MAX_CONFOUNDER_BITS: usize = 6;

/// Per-edge cap on how often a child's table reacts to flipping one parent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Damping {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Boolean function stored as a bit vector, serialized as little-endian hex
/// bytes (byte `k` holds outputs `8k..8k+7`, least significant bit first).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruthTable {
    pub arity: usize,
    bits: Vec<u8>,
}

impl TruthTable {
    fn zeros(arity: usize) -> Self {
        Self {
            arity,
            bits: vec![0; (1usize << arity).div_ceil(8)],
        }
    }

    #[inline]
    pub fn get(&self, input: usize) -> u8 {
        (self.bits[input >> 3] >> (input & 7)) & 1
    }

    fn set(&mut self, input: usize, v: u8) {
        let byte = &mut self.bits[input >> 3];
        *byte = (*byte & !(1 << (input & 7))) | ((v & 1) << (input & 7));
    }

    pub fn to_hex(&self) -> String {
        self.bits.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(arity: usize, hex: &str) -> Result<Self> {
        let expected = (1usize << arity).div_ceil(8);
        if hex.len() != 2 * expected {
            return Err(Error::Parse(format!(
                "truth table of arity {arity} needs {} hex digits, got {}",
                2 * expected,
                hex.len()
            )));
        }
        let bits = (0..expected)
            .map(|k| {
                u8::from_str_radix(&hex[2 * k..2 * k + 2], 16)
                    .map_err(|_| Error::Parse(format!("bad hex digits in `{hex}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { arity, bits })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScmRepr", into = "ScmRepr")]
pub struct GroundTruthScm {
    pub n_vars: usize,
    pub n_confounders: usize,
    pub tables: Vec<TruthTable>,
    pub damping: Vec<Damping>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ScmRepr {
    n_vars: usize,
    n_confounders: usize,
    tables: Vec<String>,
    #[serde(default)]
    damping: Vec<Damping>,
    seed: u64,
}

impl TryFrom<ScmRepr> for GroundTruthScm {
    type Error = Error;

    fn try_from(r: ScmRepr) -> Result<Self> {
        if r.tables.len() != r.n_vars {
            return Err(Error::Parse(format!(
                "expected {} truth tables, got {}",
                r.n_vars,
                r.tables.len()
            )));
        }
        let tables = r
            .tables
            .iter()
            .enumerate()
            .map(|(i, h)| TruthTable::from_hex(i + r.n_confounders + 1, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_vars: r.n_vars,
            n_confounders: r.n_confounders,
            tables,
            damping: r.damping,
            seed: r.seed,
        })
    }
}

impl From<GroundTruthScm> for ScmRepr {
    fn from(s: GroundTruthScm) -> Self {
        Self {
            n_vars: s.n_vars,
            n_confounders: s.n_confounders,
            tables: s.tables.iter().map(TruthTable::to_hex).collect(),
            damping: s.damping,
            seed: s.seed,
        }
    }
}

/// Draws random structural equations. Tables are uniform over bits; a damped
/// edge `j -> i` with weight `w` copies each output across the `j`-flip pair
/// unless a uniform draw lands below `w`, so `w = 0` removes the direct effect.
pub fn sample_scm(seed: u64, n: usize, c: usize, damping: &[Damping]) -> Result<GroundTruthScm> {
    if n == 0 || n > MAX_SCM_VARS {
        return Err(Error::UnsupportedArity(format!(
            "simulator supports 1..={MAX_SCM_VARS} variables, got {n}"
        )));
    }
    if c > MAX_CONFOUNDER_BITS {
        return Err(Error::UnsupportedArity(format!(
            "simulator supports at most {MAX_CONFOUNDER_BITS} confounder bits, got {c}"
        )));
    }
    for d in damping {
        if d.from >= d.to || d.to >= n || !(0.0..=1.0).contains(&d.weight) {
            return Err(Error::InvalidModel(format!(
                "damping {}->{} with weight {} is not a valid edge",
                d.from + 1,
                d.to + 1,
                d.weight
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tables = Vec::with_capacity(n);
    for i in 0..n {
        let arity = i + c + 1;
        let mut t = TruthTable::zeros(arity);
        for input in 0..1usize << arity {
            t.set(input, rng.gen::<bool>() as u8);
        }
        for d in damping.iter().filter(|d| d.to == i) {
            let bit = 1usize << d.from;
            for input in (0..1usize << arity).filter(|x| x & bit == 0) {
                let u: f64 = rng.gen();
                if u >= d.weight {
                    let v = t.get(input);
                    t.set(input | bit, v);
                }
            }
        }
        tables.push(t);
    }
    Ok(GroundTruthScm {
        n_vars: n,
        n_confounders: c,
        tables,
        damping: damping.to_vec(),
        seed,
    })
}

impl GroundTruthScm {
    pub fn n_exogenous(&self) -> usize {
        1 << (self.n_confounders + self.n_vars)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scm serializes")
    }

    /// Joint assignment produced by exogenous configuration `u` with the
    /// variables in `mask` forced to the matching bits of `forced`.
    #[inline]
    pub fn evaluate(&self, u: usize, mask: usize, forced: usize) -> usize {
        let c = self.n_confounders;
        let shared = u & ((1 << c) - 1);
        let mut vals = 0usize;
        for (i, table) in self.tables.iter().enumerate() {
            let bit = 1usize << i;
            if mask & bit != 0 {
                vals |= forced & bit;
                continue;
            }
            let private = (u >> (c + i)) & 1;
            let input = (vals & (bit - 1)) | (shared << i) | (private << (i + c));
            vals |= (table.get(input) as usize) << i;
        }
        vals
    }

    fn check_regime(&self, regime: &Regime) -> Result<(usize, usize)> {
        if regime.vars().iter().any(|v| v.0 >= self.n_vars) {
            return Err(Error::InvalidModel(format!(
                "regime {regime} mentions variables beyond X{}",
                self.n_vars
            )));
        }
        Ok(regime.interventions.mask_bits())
    }

    /// Exact distribution of all variables under `regime`.
    pub fn true_regime_table(&self, regime: &Regime) -> Result<RegimeTable> {
        let (mask, forced) = self.check_regime(regime)?;
        let mut counts = vec![0u64; 1 << self.n_vars];
        for u in 0..self.n_exogenous() {
            counts[self.evaluate(u, mask, forced)] += 1;
        }
        let total = self.n_exogenous() as f64;
        Ok(RegimeTable {
            regime: regime.clone(),
            probs: counts.iter().map(|&k| k as f64 / total).collect(),
            provenance: Provenance::Exact,
        })
    }

    /// Empirical frequencies from `n_samples` draws of the exogenous noise.
    pub fn sample_table(&self, regime: &Regime, n_samples: u64, seed: u64) -> Result<RegimeTable> {
        if n_samples == 0 {
            return Err(Error::InvalidModel("sample count must be positive".into()));
        }
        let (mask, forced) = self.check_regime(regime)?;
        let outcomes: Vec<usize> = (0..self.n_exogenous())
            .map(|u| self.evaluate(u, mask, forced))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u64; 1 << self.n_vars];
        for _ in 0..n_samples {
            counts[outcomes[rng.gen_range(0..outcomes.len())]] += 1;
        }
        Ok(RegimeTable {
            regime: regime.clone(),
            probs: counts.iter().map(|&k| k as f64 / n_samples as f64).collect(),
            provenance: Provenance::Empirical {
                sample_count: n_samples,
            },
        })
    }

    /// Distribution over the margin's joint response functions induced by
    /// substituting out every non-margin ancestor.
    pub fn induced_margin_theta(&self, margin: &MarginSpec) -> Result<Vec<f64>> {
        if !margin.scope_vars.is_empty() {
            return Err(Error::InvalidModel(format!(
                "induced parameters are only defined for unscoped margins ({} is scoped)",
                margin.name()
            )));
        }
        if margin.vars.iter().any(|v| v.0 >= self.n_vars) {
            return Err(Error::InvalidModel(format!("{} mentions unknown variables", margin.name())));
        }
        let space = ResponseSpace::new(margin)?;
        let size = space.enumerable_size(crate::constraints::MAX_BLOCK_SIZE)?;
        let mut theta = vec![0.0; size];
        let mass = 1.0 / self.n_exogenous() as f64;
        let mut digits = vec![0u64; margin.vars.len()];
        for u in 0..self.n_exogenous() {
            for (t, var) in margin.vars.iter().enumerate() {
                let parents = &margin.vars[..t];
                let mut f = 0u64;
                for config in 0..1usize << t {
                    let a = Assignment::from_bits(parents, config);
                    let (mask, forced) = a.mask_bits();
                    let out = (self.evaluate(u, mask, forced) >> var.0) & 1;
                    f |= (out as u64) << config;
                }
                digits[t] = f;
            }
            theta[space.encode(&digits) as usize] += mass;
        }
        Ok(theta)
    }

    /// True value of a query computed from exact regime tables.
    pub fn true_query_value(&self, query: &Query) -> Result<f64> {
        query.check()?;
        Ok(match &query.target {
            QueryTarget::Prob {
                target,
                value,
                regime,
            } => self
                .true_regime_table(regime)?
                .marginal(&Assignment::new([(*target, *value)])?),
            QueryTarget::Ate {
                target,
                treatment,
                base,
            } => {
                let ev = Assignment::new([(*target, 1)])?;
                let on = base.merge(&Regime::new([(*treatment, 1)])?)?;
                let off = base.merge(&Regime::new([(*treatment, 0)])?)?;
                self.true_regime_table(&on)?.marginal(&ev) - self.true_regime_table(&off)?.marginal(&ev)
            }
        })
    }

    /// Smallest ε for which the weak-edge family of `edge` holds for this
    /// model inside `margin`.
    pub fn measure_strength(&self, margin: &MarginSpec, edge: &WeakEdgeSpec) -> Result<f64> {
        if !(margin.contains(edge.from) && margin.contains(edge.to)) || edge.from >= edge.to {
            return Err(Error::StrengthUndefined(format!(
                "{} has no constraints for {} in {}",
                margin.name(),
                edge.label(),
                margin.name()
            )));
        }
        let single = ModelSpec {
            n_vars: self.n_vars,
            margins: vec![margin.clone()],
            coherence_pairs: vec![],
            weak_edges: vec![],
            regimes_available: vec![],
        };
        let layout = ThetaLayout::new(&single)?;
        let blocks = MarginBlocks::new(&layout, margin)?;
        let theta = self.induced_margin_theta(margin)?;
        let strength = match edge.kind {
            WeakEdgeKind::Directed => directed_contrasts(&blocks, edge)?
                .iter()
                .map(|(_, _, diff)| diff.eval(&theta).abs())
                .fold(f64::NEG_INFINITY, f64::max),
            WeakEdgeKind::Bidirected => {
                let pa = bidirected_parent_set(margin, edge);
                let tables = Assignment::all_over(&pa)
                    .map(|v| self.true_regime_table(&Regime::from_assignment(v)))
                    .collect::<Result<Vec<_>>>()?;
                bidirected_terms(&blocks, edge, |r| tables.iter().find(|t| &t.regime == r))?
                    .iter()
                    .filter_map(|t| t.conditional.map(|c| (t.expr.eval(&theta) - c).abs()))
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        };
        if strength.is_finite() {
            Ok(strength.max(0.0))
        } else {
            Err(Error::StrengthUndefined(format!(
                "no evaluable constraint for {} in {}",
                edge.label(),
                margin.name()
            )))
        }
    }
}
