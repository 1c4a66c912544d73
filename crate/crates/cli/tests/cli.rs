use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn twoweight(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twoweight"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn gen_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = twoweight(&["gen", "--seed", "11", "--depth", "3"], dir.path());
    let b = twoweight(&["gen", "--seed", "11", "--depth", "3"], dir.path());
    let c = twoweight(&["gen", "--seed", "12", "--depth", "3"], dir.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn gen_uniform_masses_lie_in_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let out = twoweight(
        &["gen", "--seed", "5", "--n", "2", "--depth", "2", "--out", "b.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&dir.path().join("b.json"));
    assert_eq!(v["v"], 1);
    for key in ["mu", "nu"] {
        let masses = v[key].as_array().unwrap();
        assert_eq!(masses.len(), 16);
        assert!(masses.iter().all(|m| {
            let m = m.as_f64().unwrap();
            m > 0.0 && m <= 1.0
        }));
    }
}

#[test]
fn haar_in_the_plane_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = twoweight(&["gen", "--n", "2", "--operator-kind", "haar"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n = 1"), "{}", stderr(&out));
}

#[test]
fn fresh_bundles_pass_the_core_suite() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for (i, kind) in ["positive", "haar"].iter().enumerate() {
        let out = twoweight(
            &[
                "gen",
                "--seed",
                &i.to_string(),
                "--depth",
                "3",
                "--operator-kind",
                kind,
                "--weight-law",
                "atomic-with-zeros",
                "--count",
                "3",
                "--out",
                &format!("b{i}"),
            ],
            p,
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let out = twoweight(&["verify", "--suite", "core", "b0", "b1", "--out", "rep"], p);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = json(&p.join("rep/verify-core.json"));
    assert_eq!(report["v"], 1);
    assert_eq!(report["failures"], 0);
    let rows = csv_rows(&p.join("rep/verify-core.csv"));
    assert!(rows.len() >= 6 * 7);
    assert!(rows.iter().all(|r| &r[5] != "fail"));
}

#[test]
fn negative_mass_is_rejected_with_its_leaf() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(twoweight(&["gen", "--seed", "2", "--out", "b.json"], p)
        .status
        .success());
    let mut v = json(&p.join("b.json"));
    v["mu"][2] = Value::from(-0.25);
    std::fs::write(p.join("bad.json"), v.to_string()).unwrap();
    let out = twoweight(&["verify", "--suite", "core", "bad.json", "--out", "rep"], p);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("bad.json") && err.contains("mu[2]"), "{err}");
    assert!(!p.join("rep/verify-core.csv").exists());
}

#[test]
fn unknown_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(twoweight(&["gen", "--out", "b.json"], p).status.success());
    let mut v = json(&p.join("b.json"));
    v["v"] = Value::from(2);
    std::fs::write(p.join("b.json"), v.to_string()).unwrap();
    let out = twoweight(&["norm", "b.json"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("`v`"), "{}", stderr(&out));
}

#[test]
fn positive_suite_at_l2_collapses_on_fifty_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = twoweight(
        &[
            "verify", "--suite", "thm31", "--trials", "50", "--depth", "3", "--budget", "quick", "--out", "rep",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = csv_rows(&p.join("rep/verify-thm31.csv"));
    let collapse: Vec<_> = rows.iter().filter(|r| &r[2] == "l2-collapse").collect();
    assert_eq!(collapse.len(), 50);
    assert!(collapse.iter().all(|r| &r[5] == "pass"));
    let report = json(&p.join("rep/verify-thm31.json"));
    assert!(report["summary"]["max_ratio"].as_f64().unwrap() <= 1.0 + 1e-6);
    assert_eq!(report["instances"].as_array().unwrap().len(), 50);
}

#[test]
fn haar_and_stopping_suites_pass() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = twoweight(
        &[
            "verify",
            "--suite",
            "thm43",
            "--trials",
            "6",
            "--depth",
            "3",
            "--p",
            "3",
            "--q",
            "1.5",
            "--weight-law",
            "log-uniform",
            "--budget",
            "quick",
            "--out",
            "rep",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = csv_rows(&p.join("rep/verify-thm43.csv"));
    assert_eq!(
        rows.iter()
            .filter(|r| &r[2] == "well-localized" && &r[5] == "pass")
            .count(),
        6
    );
    let out = twoweight(
        &[
            "verify",
            "--suite",
            "stopping",
            "--trials",
            "6",
            "--n",
            "2",
            "--depth",
            "3",
            "--p",
            "1.5",
            "--weight-law",
            "log-uniform",
            "--budget",
            "quick",
            "--out",
            "rep",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn norm_is_replayable_and_matches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(
        twoweight(&["gen", "--seed", "4", "--p", "3", "--q", "1.5", "--out", "b.json"], p)
            .status
            .success()
    );
    let a = twoweight(&["norm", "b.json", "--seed", "9"], p);
    let b = twoweight(&["norm", "b.json", "--seed", "9"], p);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let ascent: Value = serde_json::from_slice(&a.stdout).unwrap();
    let brute = twoweight(&["norm", "b.json", "--method", "bruteforce", "--grid", "24"], p);
    assert!(brute.status.success(), "{}", stderr(&brute));
    let brute: Value = serde_json::from_slice(&brute.stdout).unwrap();
    let (x, lo, hi) = (
        ascent["value"].as_f64().unwrap(),
        brute["grid_value"].as_f64().unwrap(),
        brute["upper"].as_f64().unwrap(),
    );
    assert!(lo <= x * (1.0 + 1e-9) && x <= hi, "{lo} {x} {hi}");
    assert!((brute["refined_value"].as_f64().unwrap() - x).abs() <= 1e-6 * x);
}

#[test]
fn svd_norm_outside_l2_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(twoweight(&["gen", "--p", "3", "--out", "b.json"], p).status.success());
    assert_eq!(
        twoweight(&["norm", "b.json", "--method", "svd"], p).status.code(),
        Some(2)
    );
}

#[test]
fn constants_report_orders_the_testing_constants() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(twoweight(
        &["gen", "--seed", "8", "--depth", "3", "--p", "1.5", "--q", "3", "--out", "b.json"],
        p
    )
    .status
    .success());
    let out = twoweight(&["constants", "b.json", "--budget", "quick", "--out", "c.json"], p);
    assert!(out.status.success(), "{}", stderr(&out));
    let v = json(&p.join("c.json"));
    assert_eq!(v["v"], 1);
    assert_eq!(v["policy"], "carleson-only");
    let r = &v["report"];
    assert!(r["sawyer_direct"].as_f64().unwrap() <= r["square_direct"].as_f64().unwrap() + 1e-9);
    assert!(r["sawyer_adjoint"].as_f64().unwrap() <= r["square_adjoint"].as_f64().unwrap() + 1e-9);
}

#[test]
fn empty_search_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(twoweight(&["search"], p).status.code(), Some(2));
    std::fs::write(p.join("empty.json"), "").unwrap();
    assert_eq!(
        twoweight(&["search", "--config", "empty.json"], p).status.code(),
        Some(2)
    );
    std::fs::write(p.join("braces.json"), "{}").unwrap();
    assert_eq!(
        twoweight(&["search", "--config", "braces.json"], p).status.code(),
        Some(2)
    );
}

fn search_trace(p: &Path, config: &str) -> Vec<(usize, f64, f64)> {
    std::fs::write(p.join("search.json"), config).unwrap();
    let out = twoweight(
        &[
            "search",
            "--config",
            "search.json",
            "--budget",
            "quick",
            "--seed",
            "3",
            "--out",
            "trace.csv",
        ],
        p,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    csv_rows(&p.join("trace.csv"))
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()))
        .collect()
}

#[test]
fn search_trace_keeps_the_best_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let trace = search_trace(
        dir.path(),
        r#"{"v":1,"p":4,"max_depth":4,"candidates":3,"mutations":2}"#,
    );
    assert_eq!(trace.iter().map(|t| t.0).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    for w in trace.windows(2) {
        assert!(w[1].2 >= w[0].2);
    }
    for (_, best, running) in &trace {
        assert!(running >= best);
    }
}

#[test]
fn l2_search_control_stays_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let trace = search_trace(dir.path(), r#"{"p":2,"max_depth":3,"candidates":4,"mutations":2}"#);
    assert!(trace.iter().all(|t| t.2.is_finite() && t.2 <= 10.0));
}
