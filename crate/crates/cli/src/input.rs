//! Loading models, tables and SCMs from the command line.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use margpoly::model::{ModelSpec, Query, Regime, RegimeTable};
use margpoly::presets::{self, N4Options};
use margpoly::GroundTruthScm;
use serde::{Deserialize, Serialize};

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Model JSON file, or a preset name: `paper-n4`, `paper-n6`.
    #[arg(long)]
    pub model: String,

    /// Regime table files, arrays of tables, or directories written by `simulate`.
    #[arg(long, num_args = 1.., required = true)]
    pub tables: Vec<PathBuf>,

    /// Drop the model's coherence pairs.
    #[arg(long)]
    pub no_coherence: bool,

    /// Drop the model's weak edges.
    #[arg(long)]
    pub no_weak_edges: bool,

    /// Override a weak edge's ε, e.g. `X1->X4=0.06`, `X1<->X4=0.1` or `all=0.2`.
    #[arg(long = "epsilon", value_name = "EDGE=EPS")]
    pub epsilons: Vec<String>,
}

/// Preset name to model; presets carry every optional family with vacuous ε.
pub fn preset_model(name: &str) -> Option<ModelSpec> {
    match name {
        "paper-n4" => Some(presets::paper_n4_model(&N4Options::all(1.0, 1.0))),
        "paper-n6" => Some(presets::paper_n6_model(Some(1.0), true)),
        _ => None,
    }
}

pub fn load_model_spec(model: &str) -> Result<ModelSpec> {
    if let Some(spec) = preset_model(model) {
        if !Path::new(model).exists() {
            return Ok(spec);
        }
    }
    let text = fs::read_to_string(model).with_context(|| format!("reading model file {model}"))?;
    ModelSpec::from_json(&text).with_context(|| format!("parsing model file {model}"))
}

/// Splits `LABEL=VALUE`; the label may itself contain `=`-free arrows only.
pub fn split_edge_assignment(s: &str) -> Result<(String, &str)> {
    let Some((label, value)) = s.rsplit_once('=') else {
        bail!("expected EDGE=VALUE, got `{s}`");
    };
    Ok((label.trim().to_string(), value.trim()))
}

pub fn set_epsilon(spec: &mut ModelSpec, label: &str, eps: f64) -> Result<()> {
    let mut hit = false;
    for decl in &mut spec.weak_edges {
        if label == "all" || decl.edge.label() == label {
            decl.edge.epsilon = eps;
            hit = true;
        }
    }
    if !hit {
        bail!("model has no weak edge `{label}`");
    }
    Ok(())
}

impl ModelArgs {
    pub fn spec(&self) -> Result<ModelSpec> {
        let mut spec = load_model_spec(&self.model)?;
        if self.no_coherence {
            spec.coherence_pairs.clear();
        }
        if self.no_weak_edges {
            spec.weak_edges.clear();
        }
        for e in &self.epsilons {
            let (label, value) = split_edge_assignment(e)?;
            let eps: f64 = value.parse().with_context(|| format!("bad ε in `{e}`"))?;
            set_epsilon(&mut spec, &label, eps)?;
        }
        Ok(spec)
    }

    pub fn tables(&self) -> Result<Vec<RegimeTable>> {
        let mut out = Vec::new();
        for p in &self.tables {
            out.extend(load_tables(p)?);
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub regime: String,
    pub file: String,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct Manifest {
    pub n_vars: usize,
    pub seed: u64,
    pub confounders: usize,
    pub samples: Option<u64>,
    pub scm: String,
    pub tables: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

fn load_tables(path: &Path) -> Result<Vec<RegimeTable>> {
    if path.is_dir() {
        let mpath = path.join(MANIFEST);
        let text = fs::read_to_string(&mpath).with_context(|| format!("reading {}", mpath.display()))?;
        let manifest: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", mpath.display()))?;
        let mut out = Vec::new();
        for e in &manifest.tables {
            out.extend(load_tables(&path.join(&e.file))?);
        }
        return Ok(out);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading table file {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).with_context(|| format!("parsing table list {}", path.display()))
    } else {
        Ok(vec![RegimeTable::from_json(&text).with_context(|| format!("parsing table {}", path.display()))?])
    }
}

pub fn load_scm(path: &Path) -> Result<GroundTruthScm> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    GroundTruthScm::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `paper-n4`, or regimes separated by `;`, e.g. `do();do(X2=0)`.
pub fn parse_regimes(s: &str) -> Result<Vec<Regime>> {
    if s == "paper-n4" || s == "paper-n6" {
        return Ok(presets::paper_n4_regimes());
    }
    s.split(';')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<Regime>().with_context(|| format!("invalid regime `{x}`")))
        .collect()
}

#[derive(Args, Debug, Clone)]
pub struct QueryArgs {
    /// Query such as `P(X4=1|do(X1=0))` or `ATE(X1->X4|do(X2=1))`; repeatable.
    #[arg(long = "query")]
    pub queries: Vec<String>,

    /// Every `P(X_t=1|do(a))` with one or two intervened variables that some margin holds.
    #[arg(long)]
    pub all_single_double: bool,
}

impl QueryArgs {
    pub fn queries(&self, spec: &ModelSpec) -> Result<Vec<Query>> {
        let mut out: Vec<Query> = self
            .queries
            .iter()
            .map(|q| q.parse::<Query>().with_context(|| format!("invalid query `{q}`")))
            .collect::<Result<_>>()?;
        if self.all_single_double {
            out.extend(presets::all_single_double_queries(spec));
        }
        if out.is_empty() {
            bail!("no queries: pass --query or --all-single-double");
        }
        Ok(out)
    }
}

pub fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                // a closed pipe (`| head`) is not an error
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing to stdout"),
                _ => Ok(()),
            }
        }
    }
}
