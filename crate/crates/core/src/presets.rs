//! Ready-made experiment configurations.

use crate::constraints::bidirected_parent_set;
use crate::model::{
    Assignment, CoherencePair, MarginSpec, ModelSpec, Provenance, Query, Regime, RegimeTable,
    VariableId, WeakEdgeDecl, WeakEdgeKind, WeakEdgeSpec,
};

fn regime(pairs: &[(usize, u8)]) -> Regime {
    Regime::new(pairs.iter().map(|&(v, b)| (VariableId(v), b))).expect("preset regimes are valid")
}

/// The eleven four-variable regimes: observational, `do(X2)`, `do(X3)`,
/// `do(X2, X3)` and `do(X1=0, X3)`, each with all value combinations.
pub fn paper_n4_regimes() -> Vec<Regime> {
    let mut out = vec![Regime::observational()];
    for v in 0..2 {
        out.push(regime(&[(1, v)]));
    }
    for v in 0..2 {
        out.push(regime(&[(2, v)]));
    }
    for a in 0..2 {
        for b in 0..2 {
            out.push(regime(&[(1, a), (2, b)]));
        }
    }
    for v in 0..2 {
        out.push(regime(&[(0, 0), (2, v)]));
    }
    out
}

/// Which optional constraint families the four-variable preset includes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct N4Options {
    pub coherence: bool,
    /// ε of the weak edge `X1 -> X4`, when enabled.
    pub directed_epsilon: Option<f64>,
    /// ε of the weak edge `X1 <-> X4`, when enabled.
    pub bidirected_epsilon: Option<f64>,
}

impl N4Options {
    pub fn all(directed: f64, bidirected: f64) -> Self {
        Self {
            coherence: true,
            directed_epsilon: Some(directed),
            bidirected_epsilon: Some(bidirected),
        }
    }
}

pub fn paper_n4_coherence() -> Vec<CoherencePair> {
    let pair = |a, b, o: [usize; 2]| CoherencePair {
        a,
        b,
        overlap: o.iter().map(|&i| VariableId(i)).collect(),
    };
    vec![pair(1, 2, [0, 1]), pair(2, 4, [1, 3]), pair(1, 3, [0, 2]), pair(3, 4, [2, 3])]
}

/// Margins `{X1,X2,X3}`, `{X1,X2,X4}`, `{X1,X3,X4}`, `{X2,X3,X4}` with ids 1..=4;
/// weak edges live in M2 and M3, the only margins holding both X1 and X4.
pub fn paper_n4_model(opts: &N4Options) -> ModelSpec {
    let mut weak_edges = Vec::new();
    if let Some(eps) = opts.directed_epsilon {
        weak_edges.push(WeakEdgeDecl {
            edge: WeakEdgeSpec::directed(0, 3, eps),
            margins: vec![2, 3],
        });
    }
    if let Some(eps) = opts.bidirected_epsilon {
        weak_edges.push(WeakEdgeDecl {
            edge: WeakEdgeSpec::bidirected(0, 3, eps),
            margins: vec![2, 3],
        });
    }
    ModelSpec {
        n_vars: 4,
        margins: vec![
            MarginSpec::new(1, [0, 1, 2]),
            MarginSpec::new(2, [0, 1, 3]),
            MarginSpec::new(3, [0, 2, 3]),
            MarginSpec::new(4, [1, 2, 3]),
        ],
        coherence_pairs: if opts.coherence { paper_n4_coherence() } else { vec![] },
        weak_edges,
        regimes_available: paper_n4_regimes(),
    }
}

/// Six-variable regimes: the four-variable menu lifted unchanged.
pub fn paper_n6_regimes() -> Vec<Regime> {
    paper_n4_regimes()
}

/// Weak edges of the six-variable preset.
pub fn paper_n6_edges(epsilon: f64) -> Vec<WeakEdgeSpec> {
    vec![
        WeakEdgeSpec::directed(0, 3, epsilon),
        WeakEdgeSpec::directed(0, 5, epsilon),
        WeakEdgeSpec::directed(2, 4, epsilon),
        WeakEdgeSpec::bidirected(0, 3, epsilon),
        WeakEdgeSpec::bidirected(1, 5, epsilon),
    ]
}

/// All 20 size-3 margins of six variables (ids in lexicographic order from 1),
/// coherence on every pair of margins sharing two variables, and the five
/// preset weak edges. A directed edge is placed in every margin holding both
/// endpoints; a bidirected edge only where the regimes it reads are available.
pub fn paper_n6_model(epsilon: Option<f64>, coherence: bool) -> ModelSpec {
    let mut margins = Vec::new();
    for a in 0..6 {
        for b in a + 1..6 {
            for c in b + 1..6 {
                margins.push(MarginSpec::new(margins.len() + 1, [a, b, c]));
            }
        }
    }
    let mut coherence_pairs = Vec::new();
    if coherence {
        for (x, m) in margins.iter().enumerate() {
            for n in &margins[x + 1..] {
                let shared: Vec<VariableId> = m.vars.iter().copied().filter(|v| n.contains(*v)).collect();
                if shared.len() == 2 {
                    coherence_pairs.push(CoherencePair {
                        a: m.id,
                        b: n.id,
                        overlap: shared,
                    });
                }
            }
        }
    }
    let regimes = paper_n6_regimes();
    let weak_edges = match epsilon {
        None => vec![],
        Some(eps) => paper_n6_edges(eps)
            .into_iter()
            .map(|edge| {
                let ids = margins
                    .iter()
                    .filter(|m| m.contains(edge.from) && m.contains(edge.to))
                    .filter(|m| {
                        edge.kind == WeakEdgeKind::Directed
                            || Assignment::all_over(&bidirected_parent_set(m, &edge))
                                .all(|v| regimes.contains(&Regime::from_assignment(v)))
                    })
                    .map(|m| m.id)
                    .collect();
                WeakEdgeDecl { edge, margins: ids }
            })
            .filter(|d| !d.margins.is_empty())
            .collect(),
    };
    ModelSpec {
        n_vars: 6,
        margins,
        coherence_pairs,
        weak_edges,
        regimes_available: regimes,
    }
}

/// Tables in which every non-intervened variable is an independent fair coin.
pub fn uniform_tables(n: usize, regimes: &[Regime]) -> Vec<RegimeTable> {
    regimes
        .iter()
        .map(|r| {
            let free = n - r.vars().len();
            let p = 1.0 / (1u64 << free) as f64;
            RegimeTable {
                regime: r.clone(),
                probs: (0..1usize << n)
                    .map(|j| if r.interventions.matches_joint(j) { p } else { 0.0 })
                    .collect(),
                provenance: Provenance::Exact,
            }
        })
        .collect()
}

/// Every `P(X_t = 1 | do(a))` with one or two intervened variables, in a fixed
/// order: target ascending, then intervention size, then intervened variables
/// lexicographically, then their values counting up in binary with the
/// first variable least significant. Only queries some margin can answer
/// are kept.
pub fn all_single_double_queries(spec: &ModelSpec) -> Vec<Query> {
    let n = spec.n_vars;
    let mut out = Vec::new();
    for t in 0..n {
        let mut sets: Vec<Vec<VariableId>> = (0..n).filter(|&s| s != t).map(|s| vec![VariableId(s)]).collect();
        for a in 0..n {
            for b in a + 1..n {
                if a != t && b != t {
                    sets.push(vec![VariableId(a), VariableId(b)]);
                }
            }
        }
        for set in sets {
            for values in Assignment::all_over(&set) {
                let q = Query::prob(t, 1, Regime::from_assignment(values));
                if crate::model::select_margin_for_query(spec, &q).is_ok() {
                    out.push(q);
                }
            }
        }
    }
    out
}

/// Single-intervention subset of [`all_single_double_queries`].
pub fn all_single_queries(spec: &ModelSpec) -> Vec<Query> {
    all_single_double_queries(spec)
        .into_iter()
        .filter(|q| matches!(&q.target, crate::model::QueryTarget::Prob { regime, .. } if regime.vars().len() == 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::build_model;

    #[test]
    fn n4_regime_menu_has_eleven_entries() {
        let r = paper_n4_regimes();
        assert_eq!(r.len(), 1 + 2 + 2 + 4 + 2);
        let texts: Vec<String> = r.iter().map(|x| x.to_string()).collect();
        assert!(texts.contains(&"do(X1=0,X3=1)".to_string()));
        let mut dedup = texts.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), texts.len());
    }

    #[test]
    fn n4_model_validates_in_every_configuration() {
        for opts in [N4Options::default(), N4Options::all(0.1, 0.2)] {
            let spec = paper_n4_model(&opts);
            assert!(spec.validate().is_empty(), "{:?}", spec.validate());
            build_model(&spec, &uniform_tables(4, &spec.regimes_available)).unwrap();
        }
    }

    #[test]
    fn n6_model_has_2560_parameters() {
        let spec = paper_n6_model(Some(0.2), true);
        assert_eq!(spec.margins.len(), 20);
        assert_eq!(spec.coherence_pairs.len(), 90);
        assert!(spec.validate().is_empty(), "{:?}", spec.validate());
        let built = build_model(&spec, &uniform_tables(6, &spec.regimes_available)).unwrap();
        assert_eq!(built.layout.total_dim, 2560);
        let bidir: Vec<_> = spec
            .weak_edges
            .iter()
            .filter(|d| d.edge.kind == WeakEdgeKind::Bidirected)
            .collect();
        assert_eq!(bidir.len(), 2);
    }

    #[test]
    fn uniform_tables_are_valid() {
        for t in uniform_tables(4, &paper_n4_regimes()) {
            assert!(t.check().is_empty());
        }
    }

    #[test]
    fn query_enumeration_order() {
        let spec = paper_n4_model(&N4Options::default());
        let qs = all_single_double_queries(&spec);
        assert_eq!(qs[0].to_string(), "P(X1=1|do(X2=0))");
        assert_eq!(qs[1].to_string(), "P(X1=1|do(X2=1))");
        // every query is answerable and unique
        let mut texts: Vec<String> = qs.iter().map(|q| q.to_string()).collect();
        texts.sort();
        texts.dedup();
        assert_eq!(texts.len(), qs.len());
        // {X1,X2,X4} is a margin, so both X4 double interventions over it appear
        assert!(qs.iter().any(|q| q.to_string() == "P(X4=1|do(X1=0,X2=1))"));
        // {X1,X2,X3,X4} is not, so triples never appear and the pair (X1, X2)
        // with target X3 needs M1
        assert!(qs.iter().any(|q| q.to_string() == "P(X3=1|do(X1=1,X2=1))"));
        assert_eq!(all_single_queries(&spec).len(), 4 * 3 * 2);
    }
}
