use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use sgflow::closed_form::G_MAX;
use sgflow::output::Table;
use sgflow::problem::ProblemDocument;
use sgflow::theory::RiskModel;

fn sgflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SGFLOW_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = sgflow(args, out);
    assert!(
        o.status.success(),
        "sgflow {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read_csv(path: &Path) -> BTreeMap<String, Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let (header, cols) = Table::read_reals(&text).unwrap();
    header.into_iter().zip(cols).collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file of a run directory except the timestamped run record.
fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

const SMALL_RISK: [&str; 8] = [
    "--override",
    "problem.n=20",
    "--override",
    "problem.p=40",
    "--override",
    "sgd.m=4",
    "--override",
    "grid.points=40",
];

#[test]
fn g_curve_peak() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["g_curve"], dir.path());
    let csv = read_csv(&dir.path().join("g_curve.csv"));
    let max = csv["g"].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!((max - G_MAX).abs() < 5e-4, "max g = {max}");
    assert!(csv["t"].len() == 10_000);
    let summary = read_json(&dir.path().join("g_curve.json"));
    assert_eq!(summary["metadata"]["experiment"], "g_curve");
    assert_eq!(summary["metadata"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn risk_curves_schema_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args: Vec<&str> = std::iter::once("risk_curves").chain(SMALL_RISK).collect();
    ok(&args, a.path());
    ok(&args, b.path());
    let (ca, cb) = (contents(a.path()), contents(b.path()));
    assert_eq!(ca.keys().collect::<Vec<_>>(), cb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ca {
        assert!(bytes == &cb[name], "{name} differs between identical runs");
    }
    for name in ["ridge", "gf", "gd", "sgd_exact", "sgf_bound"] {
        let csv = read_csv(&a.path().join(format!("{name}.csv")));
        for col in ["t", "lambda", "bias_sq", "variance", "risk"] {
            assert!(csv.contains_key(col), "{name}.csv lacks {col}");
        }
    }
    let gd = read_csv(&a.path().join("gd.csv"));
    assert!(gd.contains_key("k") && gd.contains_key("t_mismatch"));
    let bound = read_csv(&a.path().join("sgf_bound.csv"));
    for col in ["minibatch", "gf_total", "excess"] {
        assert!(bound.contains_key(col));
    }
    let stopping = read_json(&a.path().join("stopping_times.json"));
    assert_eq!(stopping["results"]["curves"].as_array().unwrap().len(), 5);
    let run = read_json(&a.path().join("run.json"));
    assert!(run["timestamp"].as_u64().unwrap() > 0);
    assert_eq!(run["files"].as_array().unwrap().len(), ca.len());
}

#[test]
fn csv_values_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let args: Vec<&str> = std::iter::once("risk_curves").chain(SMALL_RISK).collect();
    ok(&args, dir.path());
    let doc = ProblemDocument::from_json(&std::fs::read_to_string(dir.path().join("problem.json")).unwrap()).unwrap();
    let model = RiskModel::new(&doc.into_problem().unwrap());
    let ridge = read_csv(&dir.path().join("ridge.csv"));
    for (i, &t) in ridge["t"].iter().enumerate() {
        let bv = model.ridge(1.0 / t).unwrap();
        assert_eq!(bv.bias_sq.to_bits(), ridge["bias_sq"][i].to_bits());
        assert_eq!(bv.variance.to_bits(), ridge["variance"][i].to_bits());
    }
}

#[test]
fn problem_document_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args: Vec<&str> = std::iter::once("risk_curves").chain(SMALL_RISK).collect();
    ok(&args, a.path());
    let doc = a.path().join("problem.json");
    let doc_override = format!("problem.document={}", doc.display());
    let mut with_doc = args.clone();
    with_doc.extend(["--override", &doc_override]);
    ok(&with_doc, b.path());
    for name in ["ridge.csv", "gf.csv", "sgf_bound.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn noiseless_interpolating_bound_vanishes() {
    let dir = tempfile::tempdir().unwrap();
    let mut args: Vec<&str> = std::iter::once("risk_curves").chain(SMALL_RISK).collect();
    args.extend([
        "--override",
        "problem.sigma=0",
        "--override",
        "problem.beta0_in_row_space=true",
    ]);
    ok(&args, dir.path());
    let bound = read_csv(&dir.path().join("sgf_bound.csv"));
    let last = *bound["risk"].last().unwrap();
    assert!(last.abs() < 1e-6, "bound at the largest t = {last}");
    assert!(bound["risk"][0] > 1e-3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| sgflow(args, dir.path()).status.code().unwrap();
    assert_eq!(code(&["g_curve", "--override", "g_curve.nope=1"]), 2);
    assert_eq!(code(&["g_curve", "--override", "g_curve.mu=\"x\""]), 2);
    assert_eq!(code(&["not_an_experiment"]), 2);
    assert_eq!(code(&["risk_curves", "--override", "sgd.m=1000"]), 2);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&["g_curve", "--config", bad.to_str().unwrap()]), 2);
    assert_eq!(code(&["g_curve", "--config", "/nonexistent/config.json"]), 2);

    // a step far beyond the loss-decay limit is a numeric failure
    let mut args: Vec<&str> = std::iter::once("risk_curves").chain(SMALL_RISK).collect();
    args.extend(["--override", "sgd.epsilon=1.0"]);
    let o = sgflow(&args, dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("loss_constants"));

    let o = Command::new(env!("CARGO_BIN_EXE_sgflow"))
        .args(["g_curve", "--out"])
        .arg(dir.path())
        .env("SGFLOW_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 3, "g_curve": {"mu": 0.25, "big_l": 4.0, "points": 500}}"#).unwrap();
    let out = dir.path().join("run");
    ok(&["g_curve", "--config", cfg.to_str().unwrap(), "--seed", "11"], &out);
    let resolved = read_json(&out.join("config.json"));
    assert_eq!(resolved["results"]["seed"], 11);
    assert_eq!(resolved["results"]["g_curve"]["mu"].as_f64(), Some(0.25));
    assert!(resolved["results"].get("out").is_none());
    let summary = read_json(&out.join("g_curve.json"));
    let argmax = summary["results"]["argmax"].as_f64().unwrap();
    assert!((1.7933 / 4.0..=1.7933 / 0.25).contains(&argmax));
}

#[test]
fn thread_cap_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "verify_moments",
        "--override",
        "mc.replicates=400",
        "--override",
        "mc.checkpoints=[5,20]",
    ];
    ok(&args, a.path());
    let o = Command::new(env!("CARGO_BIN_EXE_sgflow"))
        .args(args)
        .arg("--out")
        .arg(b.path())
        .env("SGFLOW_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(contents(a.path()), contents(b.path()));
    let report = read_json(&a.path().join("verify_moments.json"));
    assert_eq!(report["results"]["pass"], true);
    assert_eq!(report["results"]["checkpoints"].as_array().unwrap().len(), 4);
}

#[test]
fn small_figure_runs() {
    let dir = tempfile::tempdir().unwrap();
    let paths = dir.path().join("paths");
    ok(&["paths", "--override", "sgd.k_max=200", "--override", "grid.points=20"], &paths);
    let sgd = read_csv(&paths.join("sgd_path.csv"));
    assert_eq!(sgd["iter"].len(), 201);
    assert!(sgd.contains_key("beta_10"));
    assert_eq!(read_csv(&paths.join("ridge_path.csv"))["lambda"].len(), 20);

    let contour = dir.path().join("contour");
    ok(
        &["contour1d", "--override", "sgd.k_max=100", "--override", "univariate.replicates=500"],
        &contour,
    );
    let grid = read_csv(&contour.join("loss_grid.csv"));
    assert_eq!(grid["loss"].len(), 81 * 81);
    assert!(grid["loss"].iter().all(|l| *l >= 0.0));
    let text = std::fs::read_to_string(contour.join("terminal_variance.csv")).unwrap();
    assert!(text.starts_with("process,terminal_mean,terminal_variance,limit_variance\nsgd,"));

    let coeff = dir.path().join("coeff");
    let mut args: Vec<&str> = std::iter::once("coeff_error").chain(SMALL_RISK).collect();
    args.extend([
        "--override",
        "mc.replicates=20",
        "--override",
        "mc.eta_draws=5",
        "--override",
        "mc.checkpoint_count=6",
        "--override",
        "grid.t_max=2",
    ]);
    ok(&args, &coeff);
    let table = read_csv(&coeff.join("coeff_error.csv"));
    assert!(!table["k"].is_empty() && table["k"].len() <= 6);
    assert!(table["bound"].iter().zip(&table["mc_error"]).all(|(b, e)| b.is_finite() && *e >= 0.0));

    let ratios = dir.path().join("ratios");
    let args: Vec<&str> = std::iter::once("ratios").chain(SMALL_RISK).collect();
    ok(&args, &ratios);
    let r = read_json(&ratios.join("ratios.json"));
    assert!(r["results"]["max_bound_ridge_ratio"].as_f64().unwrap() >= 1.0);
    assert!(r["results"]["optimal_risk_ratio"].as_f64().is_some());
}
