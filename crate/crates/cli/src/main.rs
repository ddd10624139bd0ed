use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use margpoly::constraints::{build_model, query_objective, BuiltModel};
use margpoly::lp::{export_lp, Bounder, BoundsResult, Direction, DirectionStatus, ExportFormat};
use margpoly::model::{ModelSpec, Query, RegimeTable, VariableId};
use margpoly::oracle::check_certificate;
use margpoly::scm::{sample_scm, Damping};
use margpoly::GroundTruthScm;
use rayon::prelude::*;
use serde::Serialize;

mod input;
mod svg;

use input::{load_scm, parse_regimes, split_edge_assignment, write_output, Manifest, ManifestEntry, ModelArgs, QueryArgs};

const FALSIFIED: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "margpoly", version, about = "Causal bounds from locally coherent marginal models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LpFormat {
    Lp,
    Mps,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sense {
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Side {
    Lower,
    Upper,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a ground-truth SCM and write its regime tables.
    Simulate {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        confounders: usize,
        /// `paper-n4` or a `;`-separated list such as `do();do(X2=0)`.
        #[arg(long, default_value = "paper-n4")]
        regimes: String,
        /// Draw this many samples per regime instead of exact tables.
        #[arg(long)]
        samples: Option<u64>,
        /// Damp a direct effect, e.g. `X1->X4=0` removes it.
        #[arg(long = "damping", value_name = "EDGE=W")]
        damping: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Bound queries; exits 2 when the model is falsified.
    Bound {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        queries: QueryArgs,
        /// Ground-truth SCM for the true_value column.
        #[arg(long)]
        scm: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
        format: OutFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bounds over a grid of per-edge ε values.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        queries: QueryArgs,
        /// Edge grid such as `X1<->X4=0.3,0.2,0.1`; repeat for more edges.
        #[arg(long = "edge", value_name = "EDGE=GRID", required = true)]
        edges: Vec<String>,
        #[arg(long)]
        scm: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Check feasibility and localize contradictory constraint groups.
    Falsify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the program of one query in LP or fixed MPS format.
    ExportLp {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        query: String,
        #[arg(long, value_enum, default_value_t = LpFormat::Lp)]
        format: LpFormat,
        #[arg(long, value_enum, default_value_t = Sense::Max)]
        direction: Sense,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a certificate against every constraint; exits 1 on violation.
    VerifyCertificate {
        #[command(flatten)]
        model: ModelArgs,
        /// A JSON array of numbers, or a bounds result written by `bound --format json`.
        #[arg(long)]
        certificate: PathBuf,
        #[arg(long, value_enum, default_value_t = Side::Lower)]
        side: Side,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure each weak edge's true strength in each of its margins.
    Measure {
        #[arg(long)]
        model: String,
        #[arg(long)]
        scm: PathBuf,
    },
    /// Print a preset model as JSON.
    Preset {
        #[arg(value_parser = ["paper-n4", "paper-n6"])]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Simulate {
            n,
            seed,
            confounders,
            regimes,
            samples,
            damping,
            out_dir,
        } => simulate(n, seed, confounders, &regimes, samples, &damping, &out_dir),
        Command::Bound {
            model,
            queries,
            scm,
            format,
            out,
        } => bound(&model, &queries, scm.as_deref(), format, out.as_deref()),
        Command::Sweep {
            model,
            queries,
            edges,
            scm,
            csv,
            svg,
        } => sweep(&model, &queries, &edges, scm.as_deref(), csv.as_deref(), svg.as_deref()),
        Command::Falsify { model, out } => {
            let built = build_model(&model.spec()?, &model.tables()?)?;
            let verdict = margpoly::falsify::falsify(&built)?;
            write_output(out.as_deref(), &(serde_json::to_string_pretty(&verdict)? + "\n"))?;
            Ok(if verdict.feasible { 0 } else { FALSIFIED })
        }
        Command::ExportLp {
            model,
            query,
            format,
            direction,
            out,
        } => {
            let tables = model.tables()?;
            let q: Query = query.parse().with_context(|| format!("invalid query `{query}`"))?;
            let lp = margpoly::assemble_lp(&model.spec()?, &tables, &q)?;
            let fmt = match format {
                LpFormat::Lp => ExportFormat::LpText,
                LpFormat::Mps => ExportFormat::Mps,
            };
            let dir = match direction {
                Sense::Min => Direction::Min,
                Sense::Max => Direction::Max,
            };
            write_output(out.as_deref(), &export_lp(&lp, fmt, dir))?;
            Ok(0)
        }
        Command::VerifyCertificate {
            model,
            certificate,
            side,
            tol,
            out,
        } => {
            let built = build_model(&model.spec()?, &model.tables()?)?;
            let theta = read_certificate(&certificate, side)?;
            if theta.len() != built.layout.total_dim {
                bail!(
                    "certificate has {} coordinates, model has {}",
                    theta.len(),
                    built.layout.total_dim
                );
            }
            let report = check_certificate(&theta, &built.constraints.constraints, tol)?;
            write_output(out.as_deref(), &(report.to_json() + "\n"))?;
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::Measure { model, scm } => {
            let spec = input::load_model_spec(&model)?;
            let scm = load_scm(&scm)?;
            #[derive(Serialize)]
            struct Row {
                edge: String,
                margin: String,
                strength: Option<f64>,
                error: Option<String>,
            }
            let mut rows = Vec::new();
            for decl in &spec.weak_edges {
                for id in &decl.margins {
                    let m = spec.margin(*id)?;
                    let r = scm.measure_strength(m, &decl.edge);
                    rows.push(Row {
                        edge: decl.edge.label(),
                        margin: m.name(),
                        strength: r.as_ref().ok().copied(),
                        error: r.err().map(|e| e.to_string()),
                    });
                }
            }
            write_output(None, &(serde_json::to_string_pretty(&rows)? + "\n"))?;
            Ok(0)
        }
        Command::Preset { name, out } => {
            let spec = input::preset_model(&name).expect("value parser restricts names");
            write_output(out.as_deref(), &(spec.to_json() + "\n"))?;
            Ok(0)
        }
    }
}

fn parse_damping(s: &str) -> Result<Damping> {
    let (label, w) = split_edge_assignment(s)?;
    let Some((from, to)) = label.split_once("->") else {
        bail!("damping edge must look like X1->X4, got `{label}`");
    };
    let from: VariableId = from.trim().parse()?;
    let to: VariableId = to.trim().parse()?;
    Ok(Damping {
        from: from.0,
        to: to.0,
        weight: w.parse().with_context(|| format!("bad weight in `{s}`"))?,
    })
}

fn simulate(
    n: usize,
    seed: u64,
    confounders: usize,
    regimes: &str,
    samples: Option<u64>,
    damping: &[String],
    out_dir: &Path,
) -> Result<u8> {
    let regimes = parse_regimes(regimes)?;
    let damping = damping.iter().map(|d| parse_damping(d)).collect::<Result<Vec<_>>>()?;
    let scm = sample_scm(seed, n, confounders, &damping)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("scm.json"), scm.to_json() + "\n")?;
    let mut entries = Vec::new();
    for (k, r) in regimes.iter().enumerate() {
        let table = match samples {
            Some(s) => scm.sample_table(r, s, seed.wrapping_add(k as u64 + 1))?,
            None => scm.true_regime_table(r)?,
        };
        let file = format!("table_{k:02}.json");
        fs::write(out_dir.join(&file), table.to_json() + "\n")?;
        entries.push(ManifestEntry {
            regime: r.to_string(),
            file,
        });
    }
    let manifest = Manifest {
        n_vars: n,
        seed,
        confounders,
        samples,
        scm: "scm.json".into(),
        tables: entries,
    };
    fs::write(out_dir.join(input::MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    eprintln!("wrote scm.json and {} tables to {}", regimes.len(), out_dir.display());
    Ok(0)
}

#[derive(Serialize)]
struct Row {
    query: String,
    epsilon_tuple: String,
    #[serde(serialize_with = "opt_num")]
    lower: Option<f64>,
    #[serde(serialize_with = "opt_num")]
    upper: Option<f64>,
    status: String,
    #[serde(serialize_with = "opt_num")]
    true_value: Option<f64>,
}

fn opt_num<S: serde::Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_finite() => s.serialize_str(&format!("{x}")),
        Some(x) if x.is_infinite() => s.serialize_str(if *x > 0.0 { "inf" } else { "-inf" }),
        _ => s.serialize_str(""),
    }
}

fn epsilon_tuple(spec: &ModelSpec) -> String {
    spec.weak_edges
        .iter()
        .map(|d| format!("{}={}", d.edge.label(), d.edge.epsilon))
        .collect::<Vec<_>>()
        .join(";")
}

fn status_text(b: &BoundsResult, infeasible_word: &str) -> String {
    if b.is_falsified() {
        infeasible_word.into()
    } else if b.lower_status == DirectionStatus::Unbounded || b.upper_status == DirectionStatus::Unbounded {
        "unbounded".into()
    } else {
        "optimal".into()
    }
}

/// Bounds every query against one model; per-query failures become rows.
fn bound_batch(
    spec: &ModelSpec,
    tables: &[RegimeTable],
    queries: &[Query],
    scm: Option<&GroundTruthScm>,
    infeasible_word: &str,
) -> Result<(Vec<Row>, Vec<Option<BoundsResult>>)> {
    let eps = epsilon_tuple(spec);
    let built: BuiltModel = build_model(spec, tables)?;
    let bounder = Bounder::new(&built.program(Default::default()))?;
    let results: Vec<(Row, Option<BoundsResult>)> = queries
        .par_iter()
        .map(|q| {
            let truth = scm.and_then(|s| s.true_query_value(q).ok());
            let solved = query_objective(&built, tables, q).and_then(|(obj, margin)| {
                bounder.bound(&obj, Some(format!("{q}[M{margin}]")))
            });
            match solved {
                Ok(b) => (
                    Row {
                        query: b.query.clone().unwrap_or_default(),
                        epsilon_tuple: eps.clone(),
                        lower: (!b.is_falsified()).then_some(b.lower),
                        upper: (!b.is_falsified()).then_some(b.upper),
                        status: status_text(&b, infeasible_word),
                        true_value: truth,
                    },
                    Some(b),
                ),
                Err(e) => (
                    Row {
                        query: q.to_string(),
                        epsilon_tuple: eps.clone(),
                        lower: None,
                        upper: None,
                        status: format!("error: {e}"),
                        true_value: truth,
                    },
                    None,
                ),
            }
        })
        .collect();
    Ok(results.into_iter().unzip())
}

fn csv_text(rows: &[Row]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["query", "epsilon_tuple", "lower", "upper", "status", "true_value"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn bound(
    model: &ModelArgs,
    queries: &QueryArgs,
    scm: Option<&Path>,
    format: OutFormat,
    out: Option<&Path>,
) -> Result<u8> {
    let spec = model.spec()?;
    let tables = model.tables()?;
    let qs = queries.queries(&spec)?;
    let scm = scm.map(load_scm).transpose()?;
    let (rows, results) = bound_batch(&spec, &tables, &qs, scm.as_ref(), "falsified")?;
    let text = match format {
        OutFormat::Csv => csv_text(&rows)?,
        OutFormat::Json => {
            #[derive(Serialize)]
            struct Entry<'a> {
                #[serde(flatten)]
                row: &'a Row,
                bounds: &'a Option<BoundsResult>,
            }
            let entries: Vec<Entry> = rows.iter().zip(&results).map(|(row, bounds)| Entry { row, bounds }).collect();
            serde_json::to_string_pretty(&entries)? + "\n"
        }
    };
    write_output(out, &text)?;
    let falsified = results.iter().flatten().any(BoundsResult::is_falsified);
    Ok(if falsified { FALSIFIED } else { 0 })
}

fn parse_grid(s: &str) -> Result<(String, Vec<f64>)> {
    let (label, grid) = split_edge_assignment(s)?;
    let values = grid
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad grid value `{v}` in `{s}`")))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        bail!("empty grid in `{s}`");
    }
    Ok((label, values))
}

fn sweep(
    model: &ModelArgs,
    queries: &QueryArgs,
    edges: &[String],
    scm: Option<&Path>,
    csv_out: Option<&Path>,
    svg_out: Option<&Path>,
) -> Result<u8> {
    let base = model.spec()?;
    let tables = model.tables()?;
    let qs = queries.queries(&base)?;
    let scm = scm.map(load_scm).transpose()?;
    let grids = edges.iter().map(|e| parse_grid(e)).collect::<Result<Vec<_>>>()?;

    // cartesian product, first edge outermost
    let mut tuples: Vec<Vec<f64>> = vec![vec![]];
    for (_, grid) in &grids {
        tuples = tuples
            .into_iter()
            .flat_map(|t| {
                grid.iter().map(move |&v| {
                    let mut t = t.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut panels: Vec<svg::Panel> = qs
        .iter()
        .map(|q| svg::Panel {
            title: q.to_string(),
            points: vec![],
        })
        .collect();
    for tuple in &tuples {
        let mut spec = base.clone();
        for ((label, _), &eps) in grids.iter().zip(tuple) {
            input::set_epsilon(&mut spec, label, eps)?;
        }
        labels.push(
            grids
                .iter()
                .zip(tuple)
                .map(|((l, _), e)| format!("{l}={e}"))
                .collect::<Vec<_>>()
                .join(" "),
        );
        let (batch, results) = bound_batch(&spec, &tables, &qs, scm.as_ref(), "infeasible")?;
        for ((panel, row), res) in panels.iter_mut().zip(&batch).zip(&results) {
            panel.points.push(svg::Point {
                interval: res
                    .as_ref()
                    .filter(|b| b.is_optimal())
                    .map(|b| (b.lower, b.upper)),
                truth: row.true_value,
            });
        }
        rows.extend(batch);
    }
    write_output(csv_out, &csv_text(&rows)?)?;
    if let Some(p) = svg_out {
        fs::write(p, svg::render(&labels, &panels)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(0)
}

fn read_certificate(path: &Path, side: Side) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let key = match side {
        Side::Lower => "lower_certificate",
        Side::Upper => "upper_certificate",
    };
    let picked = match &value {
        serde_json::Value::Array(items) if items.iter().all(|v| v.is_number()) => value.clone(),
        serde_json::Value::Array(items) => items
            .first()
            .and_then(|e| e.get("bounds").and_then(|b| b.get(key)).or_else(|| e.get(key)))
            .cloned()
            .context("no certificate in the first entry")?,
        obj => obj
            .get(key)
            .or_else(|| obj.get("bounds").and_then(|b| b.get(key)))
            .cloned()
            .with_context(|| format!("no `{key}` field"))?,
    };
    Ok(serde_json::from_value(picked)?)
}
