//! End-to-end runs of the `petc` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use petc_core::scenario::{self, Config};
use serde_json::Value;
use tempfile::TempDir;

fn petc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_petc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, cfg: &Config) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn short(name: &str, horizon: f64) -> Config {
    let mut cfg = scenario::preset(name).unwrap();
    cfg.simulation.horizon = horizon;
    cfg
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let mut v: Value = serde_json::from_str(&short("example2", 0.1).to_json()).unwrap();
    v["simulation"]["horizn"] = Value::from(1.0);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let o = petc(&["simulate", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizn"));
}

#[test]
fn empty_grid_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let mut cfg = scenario::preset("table2").unwrap();
    cfg.certificates.grid.as_mut().unwrap().madns.clear();
    let path = write_config(dir.path(), "grid.json", &cfg);
    let o = petc(&["certify", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_source_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&petc(&["certify"], dir.path())), 1);
    assert_eq!(code(&petc(&["certify", "--preset", "nope"], dir.path())), 1);
}

#[test]
fn table2_grid_is_written() {
    let dir = TempDir::new().unwrap();
    let o = petc(&["certify", "--preset", "table2"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("table2.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "eps_check,madns,c0_t_max,c1_t_max");
    assert_eq!(rows.len(), 17);
    let first: Vec<f64> = rows[1].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(&first[..2], &[1.0, 0.0]);
    assert!((first[2] - 0.0109).abs() < 2e-4);
    assert_eq!(read_json(&dir.path().join("certify.json"))["cells"].as_array().unwrap().len(), 16);
}

#[test]
fn certify_single_design_writes_phi() {
    let dir = TempDir::new().unwrap();
    let o = petc(&["certify", "--example", "2"], dir.path());
    assert_eq!(code(&o), 0);
    let cert = read_json(&dir.path().join("certify.json"));
    assert_eq!(cert["feasible"], Value::Bool(true));
    assert_eq!(cert["channels"][0]["t_max"].as_f64(), Some(0.0016));
    let phi = std::fs::read_to_string(dir.path().join("phi_c0.csv")).unwrap();
    assert!(phi.starts_with("tau,phi_0,phi_1,phi_2\n"));
}

#[test]
fn zero_horizon_gives_an_empty_trace() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "zero.json", &short("example1", 0.0));
    let o = petc(&["simulate", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1, "header only");
    let m = read_json(&dir.path().join("metrics.json"));
    assert_eq!(m["metrics"]["jumps"], Value::from(0));
}

#[test]
fn simulate_then_monitor_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "ex1.json", &short("example1", 0.5));
    let cfg = path.to_str().unwrap();
    let o = petc(&["simulate", "--config", cfg], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.csv", "states.csv", "events.csv", "inflight.csv", "metrics.json", "config.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let live = read_json(&dir.path().join("metrics.json"))["monitor"].clone();
    let mon = dir.path().join("mon");
    let trace = dir.path().join("trace.csv");
    let o = petc(&["monitor", "--config", cfg, "--trace", trace.to_str().unwrap()], &mon);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let replayed = read_json(&mon.join("verdict.json"));
    assert_eq!(replayed["pass"], Value::Bool(true));
    assert_eq!(replayed["rows"], live["rows"]);
    assert_eq!(replayed["jumps"]["checked"], live["jumps"]["checked"]);
}

#[test]
fn sabotage_is_a_runtime_violation() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "sab.json", &short("sabotage", 0.5));
    let cfg = path.to_str().unwrap();
    let o = petc(&["simulate", "--config", cfg], dir.path());
    assert_eq!(code(&o), 3);
    let m = read_json(&dir.path().join("metrics.json"));
    assert!(m["metrics"]["certificate_violations"].as_u64().unwrap() > 0);
    assert_eq!(m["feasible"][0], Value::Bool(false));

    let mon = dir.path().join("mon");
    let trace = dir.path().join("trace.csv");
    let o = petc(&["monitor", "--config", cfg, "--trace", trace.to_str().unwrap()], &mon);
    assert_eq!(code(&o), 3);
    let v = read_json(&mon.join("verdict.json"));
    let first = &v["jumps"]["first_violation"];
    assert!(first["u_after"].as_f64().unwrap() > first["u_before"].as_f64().unwrap());

    let mut strict = short("sabotage", 0.5);
    strict.simulation.strict = true;
    let path = write_config(dir.path(), "strict.json", &strict);
    let o = petc(&["simulate", "--config", path.to_str().unwrap()], &dir.path().join("strict"));
    assert_eq!(code(&o), 3);
}

#[test]
fn infeasible_bound_is_reported() {
    let dir = TempDir::new().unwrap();
    let mut cfg = short("example2", 0.1);
    cfg.channels[0].t_max = Some(0.0048);
    let path = write_config(dir.path(), "inf.json", &cfg);
    let o = petc(&["simulate", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn small_sweep_and_seed_override() {
    let dir = TempDir::new().unwrap();
    let mut cfg = scenario::preset("table3").unwrap();
    cfg.simulation.horizon = 0.3;
    let s = cfg.sweep.as_mut().unwrap();
    s.runs = 2;
    s.eps_check = vec![1.0];
    let path = write_config(dir.path(), "sw.json", &cfg);
    let cfg = path.to_str().unwrap();
    let o = petc(&["sweep", "--config", cfg, "--jobs", "1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4, "two profiles x two channels");

    let a = petc(&["sweep", "--config", cfg, "--seed", "9"], &dir.path().join("a"));
    let b = petc(&["sweep", "--config", cfg, "--seed", "9"], &dir.path().join("b"));
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, o.stdout);
}
