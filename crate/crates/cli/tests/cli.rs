use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nrlab_cli::{read_checkpoints, read_json, AggregateReport, CertifyReport, ExactReport};
use nrlab_core::analysis::AnalysisReport;
use nrlab_core::simulator::StrategySidecar;
use serde_json::{json, Value};
use tempfile::TempDir;

fn nrlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn fp_config(horizon: u64, seeds: &[u64]) -> Value {
    json!({
        "mechanism": { "kind": "first_price", "n": 2, "grid_step": 0.25, "H": 1.0 },
        "populations": [[0.5, 1.0], [0.5, 1.0]],
        "horizon": horizon,
        "seeds": seeds,
    })
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn minimal_simulation_writes_every_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &fp_config(10, &[7]));
    let out = tmp.path().join("out");
    let o = nrlab(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let seed = out.join("seed_7");
    for f in [
        "trace.csv",
        "strategies.json",
        "report.json",
        "checkpoints.csv",
    ] {
        assert!(seed.join(f).is_file(), "missing {f}");
    }
    assert!(out.join("aggregate.json").is_file());
    let csv = fs::read_to_string(seed.join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("t,"));
}

#[test]
fn zero_horizon_is_rejected_by_name() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &fp_config(0, &[1]));
    let o = nrlab(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("horizon"), "{err}");
    assert!(err.contains("c.json:"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let mut v = fp_config(10, &[1]);
    v["horizn"] = json!(5);
    let cfg = write_config(tmp.path(), "c.json", &v);
    let o = nrlab(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizn"), "{}", stderr(&o));
}

#[test]
fn missing_seeds_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &fp_config(10, &[]));
    let o = nrlab(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seeds"));
}

#[test]
fn aggregate_covers_every_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &fp_config(200, &[1, 2]));
    let out = tmp.path().join("out");
    let o = nrlab(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let agg: AggregateReport = read_json(&out.join("aggregate.json")).unwrap();
    assert_eq!(agg.seeds.len(), 2);
    assert_eq!(agg.seeds[0].seed, 1);
    assert_eq!(agg.seeds[1].seed, 2);
    let r: Vec<f64> = agg.seeds.iter().map(|s| s.ratio.unwrap()).collect();
    let mean = agg.mean_ratio.unwrap();
    assert!((mean - (r[0] + r[1]) / 2.0).abs() < 1e-12);
}

#[test]
fn emitted_files_round_trip() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &fp_config(300, &[3]));
    let out = tmp.path().join("out");
    let o = nrlab(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let seed = out.join("seed_3");

    let report: AnalysisReport = read_json(&seed.join("report.json")).unwrap();
    let again: AnalysisReport =
        serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(report, again);
    let side: StrategySidecar = read_json(&seed.join("strategies.json")).unwrap();
    assert_eq!(side.seed, 3);
    assert_eq!(side.horizon, 300);
    let rows = read_checkpoints(&seed.join("checkpoints.csv")).unwrap();
    assert_eq!(rows, report.checkpoints);
    let agg: AggregateReport = read_json(&out.join("aggregate.json")).unwrap();
    let agg2: AggregateReport =
        serde_json::from_str(&serde_json::to_string(&agg).unwrap()).unwrap();
    assert_eq!(agg, agg2);

    // Re-analysis from the stored trace reproduces the report.
    let re = tmp.path().join("re");
    let o = nrlab(&[
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--trace",
        seed.to_str().unwrap(),
        "--out",
        re.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let replayed: AnalysisReport = read_json(&re.join("report.json")).unwrap();
    assert_eq!(replayed, report);
}

fn certify_config() -> Value {
    json!({
        "mechanism": { "kind": "first_price", "n": 2, "grid_step": 0.25, "H": 1.0 },
        "populations": [[0.0, 0.5, 1.0], [0.0, 0.5, 1.0]],
        "deviation": { "rule": "bid_fraction", "fraction": 0.5 },
    })
}

#[test]
fn certify_exit_code_follows_the_verdict() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &certify_config());
    let c = cfg.to_str().unwrap();

    let ok = nrlab(&["certify", "--config", c, "--lambda", "0.5", "--mu", "1"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("certified"));

    let out = tmp.path().join("out");
    let bad = nrlab(&[
        "certify",
        "--config",
        c,
        "--lambda",
        "0.95",
        "--mu",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("witness"));
    let cert: CertifyReport = read_json(&out.join("certificate.json")).unwrap();
    assert!(!cert.report.holds);
    assert!(cert.report.witness.is_some());
}

#[test]
fn certify_without_deviation_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut v = certify_config();
    v.as_object_mut().unwrap().remove("deviation");
    let cfg = write_config(tmp.path(), "c.json", &v);
    let o = nrlab(&["certify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("deviation"));
}

#[test]
fn exact_on_a_small_instance() {
    let tmp = TempDir::new().unwrap();
    let v = json!({
        "mechanism": { "kind": "first_price", "n": 2, "grid_step": 0.5, "H": 1.0 },
        "populations": [[0.5, 1.0], [1.0]],
        "deviation": { "rule": "bid_fraction", "fraction": 0.5 },
        "smoothness": { "lambda": 0.5, "mu": 1.0 },
    });
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out = tmp.path().join("out");
    let o = nrlab(&[
        "exact",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("E[Opt]"));
    let r: ExactReport = read_json(&out.join("exact.json")).unwrap();
    assert!(r.lp.objective >= r.welfare_guarantee - 1e-6);
    assert!((r.expected_opt - 1.0).abs() < 1e-12);
}

#[test]
fn exact_single_unit_value_agent() {
    let tmp = TempDir::new().unwrap();
    let v = json!({
        "mechanism": { "kind": "first_price", "n": 1, "grid_step": 0.5, "H": 1.0 },
        "populations": [[1.0]],
        "deviation": { "rule": "zero" },
    });
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out = tmp.path().join("out");
    let o = nrlab(&[
        "exact",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: ExactReport = read_json(&out.join("exact.json")).unwrap();
    assert!((r.lp.objective - 1.0).abs() < 1e-9);
}

#[test]
fn exact_refuses_oversize_instances() {
    let tmp = TempDir::new().unwrap();
    let v = json!({
        "mechanism": { "kind": "first_price", "n": 3, "grid_step": 0.05, "H": 1.0 },
        "populations": [[0.25, 0.5, 1.0], [0.25, 0.5, 1.0], [0.25, 0.5, 1.0]],
        "deviation": { "rule": "fpa_log" },
    });
    let cfg = write_config(tmp.path(), "c.json", &v);
    let o = nrlab(&["exact", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("cap"), "{err}");
}
