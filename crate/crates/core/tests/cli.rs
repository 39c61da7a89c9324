use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

use ploop::estimator::EstimateResult;
use ploop::simulation::SimulationSummary;
use tempfile::NamedTempFile;

const TOY: &str = "pair,t,y,z\np1,1,10.0,0.5\np1,0,8.0,0.3\np2,0,7.0,0.1\np2,1,9.0,0.2\n";

fn csv(contents: &str) -> NamedTempFile {
    let mut f = NamedTempFile::new().unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

fn ploop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ploop"))
        .args(args)
        .output()
        .unwrap()
}

fn analyze(file: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "analyze",
        "--input",
        file.to_str().unwrap(),
        "--pair",
        "pair",
        "--treat",
        "t",
        "--outcome",
        "y",
    ];
    args.extend_from_slice(extra);
    ploop(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Ten pairs with a covariate and a mix of assignments.
fn synthetic(covariate_signal: bool) -> String {
    let mut s = String::from("pair,t,y,z\n");
    for i in 0..10 {
        let first_treated = i % 3 != 0;
        let z = [i as f64 * 0.37 % 1.0, (i as f64 * 0.61 + 0.2) % 1.0];
        let zs = if covariate_signal { z } else { [0.0, 0.0] };
        for j in 0..2 {
            let treated = (j == 0) == first_treated;
            let y = 3.0 + 2.0 * zs[j] + if treated { 1.5 } else { 0.0 } + ((i * 7 + j * 3) % 5) as f64 * 0.1;
            s.push_str(&format!("q{i},{},{y},{}\n", treated as u8, zs[j]));
        }
    }
    s
}

#[test]
fn simple_on_toy_file() {
    let f = csv(TOY);
    let o = analyze(f.path(), &["--method", "simple"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: EstimateResult = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r.point_estimate, 2.0);
    assert_eq!(r.n_pairs, 2);
    assert_eq!(r.n_treated, 1);
}

#[test]
fn interp_on_toy_file_reports_alpha() {
    let f = csv(TOY);
    let o = analyze(f.path(), &["--method", "ploop-interp", "--backend", "ols"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let alpha = &v["alpha"];
    for key in ["min", "max", "mean"] {
        let a = alpha[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&a), "{key} = {a}");
    }
    assert_eq!(v["method"], "ploop-interp");
    assert_eq!(v["backend"], "ols");
    assert_eq!(v["encoding"], "mean_diff");
}

#[test]
fn json_has_schema_fields() {
    let f = csv(&synthetic(true));
    let o = analyze(f.path(), &["--method", "ploop-differences"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for key in [
        "method",
        "backend",
        "encoding",
        "point_estimate",
        "variance",
        "std_error",
        "ci_lower",
        "ci_upper",
        "n_pairs",
        "n_treated",
        "warnings",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["warnings"].is_array());
}

#[test]
fn json_round_trips_bit_exactly() {
    let f = csv(&synthetic(true));
    for method in ["simple", "ploop-outcomes", "ploop-interp", "reg2"] {
        let o = analyze(f.path(), &["--method", method, "--seed", "17"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let text = stdout(&o);
        let r: EstimateResult = serde_json::from_str(&text).unwrap();
        let again: EstimateResult =
            serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        for (x, y) in [
            (r.point_estimate, again.point_estimate),
            (r.variance, again.variance),
            (r.std_error, again.std_error),
            (r.ci_lower, again.ci_lower),
            (r.ci_upper, again.ci_upper),
        ] {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // The printed digits agree with the library result to the bit.
        let ds = ploop::dataset::load_csv(
            f.path(),
            &ploop::dataset::CsvSchema::new("pair", "t", "y"),
        )
        .unwrap();
        let cfg = ploop::EstimationConfig {
            seed: 17,
            ..Default::default()
        };
        let lib = ploop::estimator::estimate(&ds, method.parse().unwrap(), &cfg).unwrap();
        assert_eq!(lib.point_estimate.to_bits(), r.point_estimate.to_bits());
        assert_eq!(lib.variance.to_bits(), r.variance.to_bits());
    }
}

#[test]
fn regression_without_covariates_is_usage_error() {
    let f = csv(TOY);
    let o = analyze(f.path(), &["--method", "reg1", "--no-covariates"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("reg1 requires covariates"));

    let bare = csv("pair,t,y\np1,1,1\np1,0,0\np2,0,1\np2,1,3\n");
    let o = analyze(bare.path(), &["--method", "reg1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("reg1 requires covariates"));
}

#[test]
fn dataset_errors_exit_one() {
    let two_treated = csv("pair,t,y,z\np1,1,1,0\np1,1,0,0\np2,0,1,0\np2,1,3,0\n");
    let o = analyze(two_treated.path(), &["--method", "simple"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("invalid treatment pattern"));
    assert_eq!(err.trim_end().lines().count(), 1);

    let empty = csv("pair,t,y,z\n");
    let o = analyze(empty.path(), &["--method", "simple"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no pairs"));

    let bad_cell = csv("pair,t,y,z\np1,1,abc,0\np1,0,0,0\n");
    assert_eq!(analyze(bad_cell.path(), &["--method", "simple"]).status.code(), Some(1));

    let o = analyze(Path::new("/nonexistent/file.csv"), &["--method", "simple"]);
    assert_eq!(o.status.code(), Some(1));

    let f = csv(TOY);
    let o = analyze(f.path(), &["--covariates", "missing"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    let f = csv(TOY);
    assert_eq!(analyze(f.path(), &["--method", "bogus"]).status.code(), Some(2));
    assert_eq!(analyze(f.path(), &["--backend", "svm"]).status.code(), Some(2));
    assert_eq!(analyze(f.path(), &["--confidence", "1.5"]).status.code(), Some(2));
    assert_eq!(ploop(&["analyze"]).status.code(), Some(2));
    assert_eq!(ploop(&["frobnicate"]).status.code(), Some(2));

    let o = ploop(&["simulate", "--reps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("replicates ≥ 2"));

    let o = ploop(&["simulate", "--dgp", "simpsons", "--pairs", "51"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("even pair count required"));

    assert_eq!(ploop(&["simulate", "--dgp", "nope"]).status.code(), Some(2));
    assert_eq!(ploop(&["simulate", "--p1", "2"]).status.code(), Some(2));
}

#[test]
fn compare_rows_share_dataset() {
    let f = csv(TOY);
    let o = ploop(&[
        "compare",
        "--input",
        f.path().to_str().unwrap(),
        "--pair",
        "pair",
        "--treat",
        "t",
        "--outcome",
        "y",
        "--methods",
        "simple,ploop-differences",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<EstimateResult> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].n_pairs, rows[1].n_pairs);
}

#[test]
fn compare_mean_backend_without_covariates_matches_simple() {
    let f = csv(&synthetic(true));
    let o = ploop(&[
        "compare",
        "--input",
        f.path().to_str().unwrap(),
        "--pair",
        "pair",
        "--treat",
        "t",
        "--outcome",
        "y",
        "--methods",
        "simple,ploop-outcomes",
        "--backend",
        "mean",
        "--no-covariates",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<EstimateResult> = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((rows[0].point_estimate - rows[1].point_estimate).abs() < 1e-12);
}

#[test]
fn compare_table_has_six_rows() {
    let f = csv(&synthetic(true));
    let o = ploop(&[
        "compare",
        "--input",
        f.path().to_str().unwrap(),
        "--pair",
        "pair",
        "--treat",
        "t",
        "--outcome",
        "y",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with("warning")).collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].contains("Point Est.") && lines[0].contains("Nominal Var."));
    for m in ["simple", "reg1", "reg2", "ploop-differences", "ploop-outcomes", "ploop-interp"] {
        assert!(lines.iter().any(|l| l.starts_with(m)), "{m} missing");
    }
}

#[test]
fn simulate_is_deterministic() {
    let args = [
        "simulate", "--pairs", "10", "--reps", "20", "--seed", "3", "--format", "json",
    ];
    let a = ploop(&args);
    let b = ploop(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let s: SimulationSummary = serde_json::from_str(&stdout(&a)).unwrap();
    assert_eq!(s.replicates, 20);
    assert_eq!(s.methods.len(), 4);

    let table = ploop(&["simulate", "--pairs", "10", "--reps", "20", "--methods", "simple"]);
    assert_eq!(table.status.code(), Some(0));
    assert!(stdout(&table).contains("True SE"));
}

#[test]
fn table_format_uses_six_significant_digits() {
    let f = csv(TOY);
    let o = analyze(f.path(), &["--method", "simple", "--format", "table"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("point_estimate")).unwrap();
    assert!(line.trim_end().ends_with("2.00000"), "{line}");
}
