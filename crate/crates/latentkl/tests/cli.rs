//! The `latentkl` binary end to end: exit codes, stdout formats and the files
//! a study writes, read back through the crate's own readers.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use latentkl::io::{read_blocks, read_file, PlotRecord, ReplicationRecord, SeriesRecord, SummaryRecord};
use latentkl::montecarlo::{Functional, Method};

fn latentkl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentkl"))
        .args(args)
        .output()
        .expect("spawn latentkl")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("UTF-8 stdout")
}

/// `header,...\nvalues,...` as name/value pairs.
fn single_row(text: &str) -> Vec<(String, String)> {
    let mut lines = text.lines();
    let header = lines.next().expect("header");
    let row = lines.next().expect("row");
    header
        .split(',')
        .map(str::to_string)
        .zip(row.split(',').map(str::to_string))
        .collect()
}

fn field(row: &[(String, String)], name: &str) -> f64 {
    row.iter()
        .find(|(k, _)| k == name)
        .unwrap_or_else(|| panic!("no column {name}"))
        .1
        .parse()
        .unwrap()
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn coeffs_for_the_reference_model() {
    let out = latentkl(&["coeffs"]);
    assert_eq!(out.status.code(), Some(0));
    let row = single_row(&stdout(&out));
    let ml = field(&row, "ml_type1");
    assert_eq!(ml, field(&row, "ml_type2"));
    assert_eq!(ml, field(&row, "ml_type3"));
    assert!((ml - 8.4520704281657).abs() < 1e-9, "{ml}");
    assert!((field(&row, "bayes_type1") - 1.65265305250330).abs() < 1e-9);
    assert!((field(&row, "alpha") - 0.5).abs() < 1e-15);
    assert!((field(&row, "prediction") - 1.5).abs() < 1e-12);
    let gap = field(&row, "gap_ml_bayes");
    assert!((gap - (ml - field(&row, "bayes_type1"))).abs() < 1e-12);
}

#[test]
fn coeffs_alpha_flag() {
    let row = single_row(&stdout(&latentkl(&["coeffs", "--alpha", "1"])));
    // With every label targeted the primed Bayes errors are the unprimed one.
    let b1 = field(&row, "bayes_type1");
    assert!((field(&row, "bayes_type2p") - b1).abs() < 1e-9 * b1);
    assert!((field(&row, "bayes_type3p") - b1).abs() < 1e-9 * b1);
}

#[test]
fn validate_reports_identifiability() {
    let out = latentkl(&["validate"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("ok,true"));

    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"model": {"family": "binomial", "trial_count": 3, "true_param": [0.5, 0.4, 0.4]}}"#,
    );
    let out = latentkl(&["validate", "--config", &config]);
    assert_ne!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("component_distance,0.0000000000000000e0"), "{text}");
    assert!(text.contains("ok,false"));
}

#[test]
fn fisher_blocks_parse_and_decompose() {
    let out = latentkl(&["fisher"]);
    assert_eq!(out.status.code(), Some(0));
    let blocks = read_blocks(out.stdout.as_slice(), Path::new("<stdout>")).unwrap();
    let get = |name: &str| &blocks.iter().find(|b| b.name == name).unwrap().rows;
    let (xy, x, cond) = (get("i_xy"), get("i_x"), get("i_y_given_x"));
    for i in 0..3 {
        for j in 0..3 {
            assert!((xy[i][j] - x[i][j] - cond[i][j]).abs() < 1e-12);
            assert_eq!(xy[i][j], xy[j][i]);
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(latentkl(&["--bogus"]).status.code(), Some(1));
    assert_eq!(latentkl(&["simulate"]).status.code(), Some(1));
    assert_eq!(latentkl(&["simulate", "--n", "10", "--functional", "type9"]).status.code(), Some(1));
    assert_eq!(latentkl(&["--help"]).status.code(), Some(0));
    // Too few sample sizes to extrapolate is caught before any replication runs.
    assert_eq!(latentkl(&["study", "--n-grid", "40,80"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"study": {"replications": 10, "colour": "red"}}"#);
    let out = latentkl(&["validate", "--config", &config]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("colour"), "{err}");

    assert_eq!(latentkl(&["validate", "--config", "/nonexistent/x.json"]).status.code(), Some(1));
}

#[test]
fn simulate_writes_readable_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = latentkl(&[
        "simulate",
        "--n",
        "30",
        "--replications",
        "40",
        "--seed",
        "9",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let summary: Vec<SummaryRecord> = read_file(&out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.len(), 1);
    let s = &summary[0];
    assert_eq!((s.functional, s.method, s.n, s.replications, s.seed), (Functional::TypeI, Method::Ml, 30, 40, 9));

    let reps: Vec<ReplicationRecord> = read_file(&out_dir.join("replications.csv")).unwrap();
    assert_eq!(reps.len(), 40);
    let values: Vec<f64> = reps.iter().map(|r| r.value.unwrap()).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    assert!((mean - s.mean).abs() <= 1e-12 * s.mean.abs());
    assert!(values.iter().all(|&v| v >= 0.0));

    // Reading a file with another record type fails on the header.
    assert!(read_file::<SummaryRecord>(&out_dir.join("replications.csv")).is_err());
}

#[test]
fn study_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("study");
    let config = write_config(
        dir.path(),
        r#"{
            "study": {"functional": "type1", "method": "ml", "n_grid": [20, 40, 60, 80], "replications": 30, "seed": 5},
            "output": {"formats": ["summary", "series", "plot"]}
        }"#,
    );
    let out = latentkl(&["study", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    // Thirty replications cannot pin the coefficient down; any verdict is fine
    // as long as the run completes and writes its files.
    assert!(matches!(out.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&out.stderr));

    let summary: Vec<SummaryRecord> = read_file(&out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.iter().map(|s| s.n).collect::<Vec<_>>(), [20, 40, 60, 80]);
    let series: Vec<SeriesRecord> = read_file(&out_dir.join("series.csv")).unwrap();
    assert_eq!(series.len(), 1);
    assert_eq!(series[0].series, "type1/ml");
    assert_eq!(series[0].points, 4);
    assert!((series[0].theory.unwrap() - 8.4520704281657).abs() < 1e-9);
    let plot: Vec<PlotRecord> = read_file(&out_dir.join("plot.csv")).unwrap();
    assert!(plot.iter().any(|p| p.kind == "theory"));
    for (p, s) in plot.iter().filter(|p| p.kind == "estimate").zip(&summary) {
        assert_eq!(p.n, Some(s.n));
        assert!(p.ci_low.unwrap() <= p.value && p.value <= p.ci_high.unwrap());
    }
    assert!(!out_dir.join("replications.csv").exists());
    assert!(out_dir.join("config.json").exists());
}
