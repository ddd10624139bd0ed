//! Python bindings: models, tables, simulators and the bounding routines.

use margpoly::lp::{export_lp as write_lp, Direction, DirectionStatus, ExportFormat};
use margpoly::model::{ModelSpec, Query, Regime, RegimeTable, VariableId};
use margpoly::scm::{sample_scm, Damping};
use margpoly::{build_model, query_objective, Bounder, BoundsResult, GroundTruthScm};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

create_exception!(margpoly, MargpolyError, PyValueError);

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    MargpolyError::new_err(e.to_string())
}

fn parse_query(q: &str) -> PyResult<Query> {
    q.parse::<Query>().map_err(err)
}

fn parse_regime(r: &str) -> PyResult<Regime> {
    r.parse::<Regime>().map_err(err)
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn status_name(s: DirectionStatus) -> &'static str {
    match s {
        DirectionStatus::Optimal => "optimal",
        DirectionStatus::Infeasible => "infeasible",
        DirectionStatus::Unbounded => "unbounded",
    }
}

fn owned_tables(tables: &[PyRef<'_, Table>]) -> Vec<RegimeTable> {
    tables.iter().map(|t| t.inner.clone()).collect()
}

/// A causal model over binary variables: margins, coherence pairs, weak edges.
#[pyclass(module = "margpoly", skip_from_py_object)]
#[derive(Clone)]
pub struct Model {
    inner: ModelSpec,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ModelSpec::from_json(text).map_err(err)?,
        })
    }

    /// `paper-n4` or `paper-n6`, with every optional family at ε = 1.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        use margpoly::presets::{paper_n4_model, paper_n6_model, N4Options};
        let inner = match name {
            "paper-n4" => paper_n4_model(&N4Options::all(1.0, 1.0)),
            "paper-n6" => paper_n6_model(Some(1.0), true),
            _ => return Err(err(format!("unknown preset `{name}`"))),
        };
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_vars(&self) -> usize {
        self.inner.n_vars
    }

    #[getter]
    fn n_margins(&self) -> usize {
        self.inner.margins.len()
    }

    #[getter]
    fn regimes(&self) -> Vec<String> {
        self.inner.regimes_available.iter().map(|r| r.to_string()).collect()
    }

    /// Weak edge labels with their current ε.
    fn weak_edges(&self) -> Vec<(String, f64)> {
        self.inner
            .weak_edges
            .iter()
            .map(|d| (d.edge.label(), d.edge.epsilon))
            .collect()
    }

    /// Sets ε on every declaration of `label` (`all` hits every edge).
    fn set_epsilon(&mut self, label: &str, epsilon: f64) -> PyResult<()> {
        let mut hit = false;
        for decl in &mut self.inner.weak_edges {
            if label == "all" || decl.edge.label() == label {
                decl.edge.epsilon = epsilon;
                hit = true;
            }
        }
        if hit {
            Ok(())
        } else {
            Err(err(format!("model has no weak edge `{label}`")))
        }
    }

    fn clear_coherence(&mut self) {
        self.inner.coherence_pairs.clear();
    }

    fn clear_weak_edges(&mut self) {
        self.inner.weak_edges.clear();
    }

    /// Rule violations as strings; empty when the model is valid.
    fn validate(&self) -> Vec<String> {
        self.inner.validate().iter().map(|d| d.to_string()).collect()
    }

    /// Every one- or two-variable intervention query some margin can answer.
    fn single_double_queries(&self) -> Vec<String> {
        margpoly::presets::all_single_double_queries(&self.inner)
            .iter()
            .map(|q| q.to_string())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n_vars={}, margins={}, weak_edges={})",
            self.inner.n_vars,
            self.inner.margins.len(),
            self.inner.weak_edges.len()
        )
    }
}

/// Joint distribution of all variables under one regime.
#[pyclass(module = "margpoly", skip_from_py_object)]
#[derive(Clone)]
pub struct Table {
    inner: RegimeTable,
}

#[pymethods]
impl Table {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RegimeTable::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn regime(&self) -> String {
        self.inner.regime.to_string()
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs.clone()
    }

    #[getter]
    fn n_vars(&self) -> usize {
        self.inner.n_vars()
    }

    fn __repr__(&self) -> String {
        format!("Table(regime={}, n_vars={})", self.inner.regime, self.inner.n_vars())
    }
}

/// Interval for one query; NaN ends when the constraints are infeasible.
#[pyclass(module = "margpoly", get_all, skip_from_py_object)]
#[derive(Clone)]
pub struct Bounds {
    query: String,
    lower: f64,
    upper: f64,
    lower_status: String,
    upper_status: String,
    falsified: bool,
    lower_certificate: Vec<f64>,
    upper_certificate: Vec<f64>,
    max_duality_gap: f64,
}

impl Bounds {
    fn from_result(query: String, b: &BoundsResult) -> Self {
        Self {
            query: b.query.clone().unwrap_or(query),
            lower: b.lower,
            upper: b.upper,
            lower_status: status_name(b.lower_status).into(),
            upper_status: status_name(b.upper_status).into(),
            falsified: b.is_falsified(),
            lower_certificate: b.lower_certificate.clone(),
            upper_certificate: b.upper_certificate.clone(),
            max_duality_gap: b.max_duality_gap,
        }
    }
}

#[pymethods]
impl Bounds {
    #[getter]
    fn width(&self) -> f64 {
        self.upper - self.lower
    }

    fn contains(&self, x: f64, tol: f64) -> bool {
        self.lower - tol <= x && x <= self.upper + tol
    }

    fn __repr__(&self) -> String {
        if self.falsified {
            format!("Bounds({}, infeasible)", self.query)
        } else {
            format!("Bounds({}, [{}, {}])", self.query, self.lower, self.upper)
        }
    }
}

/// Ground-truth structural model over binary variables.
#[pyclass(module = "margpoly", skip_from_py_object)]
#[derive(Clone)]
pub struct Scm {
    inner: GroundTruthScm,
}

#[pymethods]
impl Scm {
    /// `damping` holds `(from, to, weight)` with labels such as `"X1"`.
    #[staticmethod]
    #[pyo3(signature = (seed, n_vars, confounders = 1, damping = None))]
    fn sample(seed: u64, n_vars: usize, confounders: usize, damping: Option<Vec<(String, String, f64)>>) -> PyResult<Self> {
        let damping = damping
            .unwrap_or_default()
            .into_iter()
            .map(|(a, b, weight)| {
                let from: VariableId = a.parse().map_err(err)?;
                let to: VariableId = b.parse().map_err(err)?;
                Ok(Damping {
                    from: from.0,
                    to: to.0,
                    weight,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self {
            inner: sample_scm(seed, n_vars, confounders, &damping).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: GroundTruthScm::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_vars(&self) -> usize {
        self.inner.n_vars
    }

    fn true_table(&self, regime: &str) -> PyResult<Table> {
        let inner = self.inner.true_regime_table(&parse_regime(regime)?).map_err(err)?;
        Ok(Table { inner })
    }

    fn sample_table(&self, regime: &str, n_samples: u64, seed: u64) -> PyResult<Table> {
        let inner = self
            .inner
            .sample_table(&parse_regime(regime)?, n_samples, seed)
            .map_err(err)?;
        Ok(Table { inner })
    }

    /// Exact tables for every regime the model lists.
    fn tables_for(&self, model: &Model) -> PyResult<Vec<Table>> {
        model
            .inner
            .regimes_available
            .iter()
            .map(|r| {
                Ok(Table {
                    inner: self.inner.true_regime_table(r).map_err(err)?,
                })
            })
            .collect()
    }

    fn true_value(&self, query: &str) -> PyResult<f64> {
        self.inner.true_query_value(&parse_query(query)?).map_err(err)
    }

    /// `(edge, margin, strength)` for every weak-edge declaration of `model`.
    fn measure(&self, model: &Model) -> PyResult<Vec<(String, String, Option<f64>)>> {
        let spec = &model.inner;
        let mut out = Vec::new();
        for decl in &spec.weak_edges {
            for id in &decl.margins {
                let m = spec.margin(*id).map_err(err)?;
                let s = self.inner.measure_strength(m, &decl.edge).ok();
                out.push((decl.edge.label(), m.name(), s));
            }
        }
        Ok(out)
    }
}

#[pyfunction]
fn bound(model: &Model, tables: Vec<PyRef<'_, Table>>, query: &str) -> PyResult<Bounds> {
    let q = parse_query(query)?;
    let b = margpoly::bound(&model.inner, &owned_tables(&tables), &q).map_err(err)?;
    Ok(Bounds::from_result(query.into(), &b))
}

/// Bounds many queries against one phase-one solve.
#[pyfunction]
fn bound_all(py: Python<'_>, model: &Model, tables: Vec<PyRef<'_, Table>>, queries: Vec<String>) -> PyResult<Vec<Bounds>> {
    let tables = owned_tables(&tables);
    let queries = queries
        .iter()
        .map(|q| parse_query(q))
        .collect::<PyResult<Vec<_>>>()?;
    let spec = model.inner.clone();
    py.detach(move || {
        let built = build_model(&spec, &tables).map_err(err)?;
        let bounder = Bounder::new(&built.program(Default::default())).map_err(err)?;
        queries
            .iter()
            .map(|q| {
                let (obj, margin) = query_objective(&built, &tables, q).map_err(err)?;
                let b = bounder
                    .bound(&obj, Some(format!("{q}[M{margin}]")))
                    .map_err(err)?;
                Ok(Bounds::from_result(q.to_string(), &b))
            })
            .collect()
    })
}

/// Feasibility verdict as a dict; `blamed` names the conflicting groups.
#[pyfunction]
fn falsify(py: Python<'_>, model: &Model, tables: Vec<PyRef<'_, Table>>) -> PyResult<Py<PyAny>> {
    let built = build_model(&model.inner, &owned_tables(&tables)).map_err(err)?;
    let verdict = margpoly::falsify::falsify(&built).map_err(err)?;
    json_to_py(py, &serde_json::to_string(&verdict).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (model, tables, query, format = "lp", direction = "max"))]
fn export_lp(model: &Model, tables: Vec<PyRef<'_, Table>>, query: &str, format: &str, direction: &str) -> PyResult<String> {
    let fmt = match format {
        "lp" => ExportFormat::LpText,
        "mps" => ExportFormat::Mps,
        _ => return Err(err(format!("format must be `lp` or `mps`, got `{format}`"))),
    };
    let dir = match direction {
        "min" => Direction::Min,
        "max" => Direction::Max,
        _ => return Err(err(format!("direction must be `min` or `max`, got `{direction}`"))),
    };
    let lp = margpoly::assemble_lp(&model.inner, &owned_tables(&tables), &parse_query(query)?).map_err(err)?;
    Ok(write_lp(&lp, fmt, dir))
}

/// Checks a θ vector against every constraint of the model; returns a dict.
#[pyfunction]
#[pyo3(signature = (model, tables, theta, tol = 1e-7))]
fn check_certificate(
    py: Python<'_>,
    model: &Model,
    tables: Vec<PyRef<'_, Table>>,
    theta: Vec<f64>,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    let built = build_model(&model.inner, &owned_tables(&tables)).map_err(err)?;
    if theta.len() != built.layout.total_dim {
        return Err(err(format!(
            "certificate has {} coordinates, model has {}",
            theta.len(),
            built.layout.total_dim
        )));
    }
    let report = margpoly::oracle::check_certificate(&theta, &built.constraints.constraints, tol).map_err(err)?;
    json_to_py(py, &report.to_json())
}

/// Natural bounds on `P(Y=1|do(X=x))` from an observational two-variable table.
#[pyfunction]
fn manski_bounds(table: &Table, x: u8) -> PyResult<(f64, f64)> {
    margpoly::oracle::manski_bounds(&table.inner, x).map_err(err)
}

#[pymodule]
#[pyo3(name = "margpoly")]
fn margpoly_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MargpolyError", m.py().get_type::<MargpolyError>())?;
    m.add_class::<Model>()?;
    m.add_class::<Table>()?;
    m.add_class::<Bounds>()?;
    m.add_class::<Scm>()?;
    m.add_function(wrap_pyfunction!(bound, m)?)?;
    m.add_function(wrap_pyfunction!(bound_all, m)?)?;
    m.add_function(wrap_pyfunction!(falsify, m)?)?;
    m.add_function(wrap_pyfunction!(export_lp, m)?)?;
    m.add_function(wrap_pyfunction!(check_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(manski_bounds, m)?)?;
    Ok(())
}
