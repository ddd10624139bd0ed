use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_margpoly"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("sim");
    let mut args = vec!["simulate", "--n", "4", "--seed", "7", "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[derive(Debug)]
struct Row {
    query: String,
    eps: String,
    lower: Option<f64>,
    upper: Option<f64>,
    status: String,
    truth: Option<f64>,
}

fn rows(csv_text: &str) -> Vec<Row> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["query", "epsilon_tuple", "lower", "upper", "status", "true_value"]
    );
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let num = |i: usize| rec[i].parse::<f64>().ok();
            Row {
                query: rec[0].to_string(),
                eps: rec[1].to_string(),
                lower: num(2),
                upper: num(3),
                status: rec[4].to_string(),
                truth: num(5),
            }
        })
        .collect()
}

#[test]
fn simulate_writes_eleven_tables_for_preset_regimes() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), &[]);
    let tables = fs::read_dir(&sim)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("table_"))
        .count();
    assert_eq!(tables, 11);
    assert!(sim.join("scm.json").exists() && sim.join("manifest.json").exists());
}

#[test]
fn sampled_simulation_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        let o = run(&["simulate", "--samples", "1000", "--seed", "1", "--out-dir", d.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    for name in ["scm.json", "manifest.json", "table_00.json", "table_10.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.path().join("table_00.json")).unwrap()).unwrap();
    assert_eq!(t["provenance"]["sample_count"], 1000);
}

#[test]
fn oversized_simulation_is_rejected() {
    let dir = TempDir::new().unwrap();
    let o = run(&["simulate", "--n", "12", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported arity"));
}

#[test]
fn identified_queries_have_zero_width() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), &[]);
    let o = run(&[
        "bound",
        "--model",
        "paper-n4",
        "--tables",
        sim.to_str().unwrap(),
        "--query",
        "P(X4=1|do(X2=0,X3=1))",
        "--query",
        "P(X4=1|do(X1=0,X3=0))",
        "--scm",
        sim.join("scm.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    for r in rows(&stdout(&o)) {
        let (lo, hi) = (r.lower.unwrap(), r.upper.unwrap());
        assert!(hi - lo <= 1e-9, "{r:?}");
        assert!((lo - r.truth.unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn unconstrained_bounds_contain_truth_and_are_byte_stable() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), &[]);
    let scm = sim.join("scm.json");
    let args = [
        "bound",
        "--model",
        "paper-n4",
        "--no-coherence",
        "--no-weak-edges",
        "--tables",
        sim.to_str().unwrap(),
        "--all-single-double",
        "--scm",
        scm.to_str().unwrap(),
    ];
    let first = run(&args);
    assert_eq!(code(&first), 0);
    let parsed = rows(&stdout(&first));
    assert_eq!(parsed.len(), 72);
    for r in &parsed {
        let (lo, hi, t) = (r.lower.unwrap(), r.upper.unwrap(), r.truth.unwrap());
        assert!((-1e-9..=1.0 + 1e-9).contains(&lo) && hi <= 1.0 + 1e-9);
        assert!(lo - 1e-7 <= t && t <= hi + 1e-7, "{r:?}");
        assert!(r.query.ends_with(']'));
        assert_eq!(r.status, "optimal");
    }
    assert_eq!(stdout(&first), stdout(&run(&args)));
}

#[test]
fn epsilon_below_strength_falsifies() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), &[]);
    let o = run(&[
        "bound",
        "--model",
        "paper-n4",
        "--tables",
        sim.to_str().unwrap(),
        "--epsilon",
        "all=0",
        "--all-single-double",
    ]);
    assert_eq!(code(&o), 2);
    assert!(rows(&stdout(&o)).iter().all(|r| r.status == "falsified" && r.lower.is_none()));
}

#[test]
fn sweep_flips_to_infeasible_monotonically_and_nests() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), &[]);
    let svg = dir.path().join("sweep.svg");
    let o = run(&[
        "sweep",
        "--model",
        "paper-n4",
        "--tables",
        sim.to_str().unwrap(),
        "--query",
        "P(X4=1|do(X1=0))",
        "--query",
        "P(X4=1|do(X1=1,X2=0))",
        "--edge",
        "X1<->X4=1,0.5,0.3,0.2,0.15,0.1,0.05,0",
        "--scm",
        sim.join("scm.json").to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let all = rows(&stdout(&o));
    assert_eq!(all.len(), 16);
    for q in ["P(X4=1|do(X1=0))", "P(X4=1|do(X1=1,X2=0))"] {
        let series: Vec<&Row> = all.iter().filter(|r| r.query.starts_with(q)).collect();
        let first_bad = series.iter().position(|r| r.status == "infeasible").expect("crosses the strength");
        assert!(first_bad > 0);
        assert!(series[first_bad..].iter().all(|r| r.status == "infeasible"));
        for w in series[..first_bad].windows(2) {
            assert!(w[1].lower.unwrap() >= w[0].lower.unwrap() - 1e-7);
            assert!(w[1].upper.unwrap() <= w[0].upper.unwrap() + 1e-7);
        }
    }
    let doc = fs::read_to_string(&svg).unwrap();
    assert!(doc.starts_with("<svg") && doc.contains("version=\"1.1\""));
}

#[test]
fn unit_epsilon_sweep_matches_plain_bound() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), &[]);
    let s = sim.to_str().unwrap();
    let sweep = run(&[
        "sweep", "--model", "paper-n4", "--tables", s, "--all-single-double", "--edge", "X1->X4=1", "--edge", "X1<->X4=1",
    ]);
    let plain = run(&["bound", "--model", "paper-n4", "--no-weak-edges", "--tables", s, "--all-single-double"]);
    let (a, b) = (rows(&stdout(&sweep)), rows(&stdout(&plain)));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.query, y.query);
        assert!((x.lower.unwrap() - y.lower.unwrap()).abs() <= 1e-9);
        assert!((x.upper.unwrap() - y.upper.unwrap()).abs() <= 1e-9);
        assert_eq!(x.eps, "X1->X4=1;X1<->X4=1");
    }
}

#[test]
fn falsify_verdicts() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), &[]);
    let s = sim.to_str().unwrap();

    let ok = run(&["falsify", "--model", "paper-n4", "--tables", s]);
    assert_eq!(code(&ok), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&ok)).unwrap();
    assert_eq!(v["feasible"], true);

    let bad = run(&["falsify", "--model", "paper-n4", "--tables", s, "--epsilon", "X1<->X4=0"]);
    assert_eq!(code(&bad), 2);
    let v: serde_json::Value = serde_json::from_str(&stdout(&bad)).unwrap();
    let blamed: Vec<String> = serde_json::from_value(v["blamed"].clone()).unwrap();
    assert!(!blamed.is_empty() && blamed.iter().all(|g| g.starts_with("weak-bidir:")), "{blamed:?}");

    // a second, different observational table contradicts the first
    let other = dir.path().join("other.json");
    let mut t: serde_json::Value = serde_json::from_str(&fs::read_to_string(sim.join("table_00.json")).unwrap()).unwrap();
    t["probs"] = serde_json::json!(vec![1.0 / 16.0; 16]);
    fs::write(&other, t.to_string()).unwrap();
    let clash = run(&["falsify", "--model", "paper-n4", "--tables", s, other.to_str().unwrap()]);
    assert_eq!(code(&clash), 2);
    let v: serde_json::Value = serde_json::from_str(&stdout(&clash)).unwrap();
    let blamed: Vec<String> = serde_json::from_value(v["blamed"].clone()).unwrap();
    assert!(blamed.iter().all(|g| g.starts_with("binding:")), "{blamed:?}");
}

#[test]
fn certificates_verify_and_perturbations_fail() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), &[]);
    let s = sim.to_str().unwrap();
    let json = dir.path().join("bounds.json");
    let o = run(&[
        "bound", "--model", "paper-n4", "--tables", s, "--epsilon", "all=0.4", "--query", "P(X4=1|do(X1=0))",
        "--format", "json", "--out", json.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let lp = dir.path().join("q.lp");
    let e = run(&[
        "export-lp", "--model", "paper-n4", "--tables", s, "--epsilon", "all=0.4", "--query", "P(X4=1|do(X1=0))",
        "--out", lp.to_str().unwrap(),
    ]);
    assert_eq!(code(&e), 0);
    assert!(fs::read_to_string(&lp).unwrap().starts_with("\\ 512 variables"));

    let verify = |cert: &Path, side: &str| {
        run(&[
            "verify-certificate", "--model", "paper-n4", "--tables", s, "--epsilon", "all=0.4", "--certificate",
            cert.to_str().unwrap(), "--side", side,
        ])
    };
    for side in ["lower", "upper"] {
        let v = verify(&json, side);
        assert_eq!(code(&v), 0, "{}", stdout(&v));
    }

    let entries: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let mut cert: Vec<f64> = serde_json::from_value(entries[0]["bounds"]["lower_certificate"].clone()).unwrap();
    cert[0] += 0.1;
    let bad = dir.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&cert).unwrap()).unwrap();
    let v = verify(&bad, "lower");
    assert_eq!(code(&v), 1);
    let report: serde_json::Value = serde_json::from_str(&stdout(&v)).unwrap();
    let simplex = report["violations"]
        .as_array()
        .unwrap()
        .iter()
        .find(|x| x["tag"] == "simplex:M1")
        .expect("simplex row reported");
    assert!((simplex["violation"].as_f64().unwrap() - 0.1).abs() < 1e-9);
}

#[test]
fn malformed_model_reports_line() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), &[]);
    let model = dir.path().join("model.json");
    fs::write(&model, "{\n  \"n_vars\": 4,\n  \"margins\": [oops]\n}\n").unwrap();
    let o = run(&["bound", "--model", model.to_str().unwrap(), "--tables", sim.to_str().unwrap(), "--query", "P(X1=1)"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["bound"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn preset_round_trips_through_a_file() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), &[]);
    let model = dir.path().join("n4.json");
    assert_eq!(code(&run(&["preset", "paper-n4", "--out", model.to_str().unwrap()])), 0);
    let args = |m: &str| {
        run(&["bound", "--model", m, "--tables", sim.to_str().unwrap(), "--query", "P(X4=1|do(X1=1))"])
    };
    assert_eq!(stdout(&args(model.to_str().unwrap())), stdout(&args("paper-n4")));
}

#[test]
fn measured_strengths_are_listed() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path(), &[]);
    let o = run(&["measure", "--model", "paper-n4", "--scm", sim.join("scm.json").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
    assert!(v.as_array().unwrap().iter().all(|r| r["strength"].as_f64().is_some()));
}
