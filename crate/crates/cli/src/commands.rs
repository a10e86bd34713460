//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use petc_core::monitor::{self, Verdict};
use petc_core::netsim::{self, derive_seed, RowKind, Trace};
use petc_core::scenario::{self, profile_name, Config};
use petc_core::Error;
use serde_json::{json, Value};

use crate::Common;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_VIOLATION: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

/// Errors while building a scenario: certification failures are infeasibility.
fn build_failure(e: Error) -> Failure {
    Failure {
        code: if e.is_certification() { EXIT_INFEASIBLE } else { EXIT_CONFIG },
        message: e.to_string(),
    }
}

/// Errors while running: certification failures are runtime violations.
fn run_failure(e: Error) -> Failure {
    Failure {
        code: if e.is_certification() { EXIT_VIOLATION } else { EXIT_CONFIG },
        message: e.to_string(),
    }
}

type CmdResult = Result<u8, Failure>;

fn load(c: &Common) -> Result<Config, Failure> {
    let mut cfg = match (&c.config, &c.example, &c.preset) {
        (Some(path), _, _) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            Config::from_json(&text).map_err(|e| Failure::config(e.to_string()))?
        }
        (None, Some(n), _) => scenario::preset(n).map_err(|e| Failure::config(e.to_string()))?,
        (None, None, Some(p)) => scenario::preset(p).map_err(|e| Failure::config(e.to_string()))?,
        (None, None, None) => return Err(Failure::config("one of --config, --example, --preset is required")),
    };
    if let Some(seed) = c.seed {
        cfg.simulation.schedule_seed = derive_seed(seed, 0, 1);
        cfg.simulation.delay_seed = derive_seed(seed, 0, 2);
        if let Some(s) = cfg.sweep.as_mut() {
            s.master_seed = seed;
        }
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::config(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json serialises") + "\n"
}

pub fn certify(c: &Common) -> CmdResult {
    let cfg = load(c)?;
    if cfg.certificates.grid.is_some() {
        return certify_grid(c, &cfg);
    }
    let certs = cfg.certify().map_err(build_failure)?;
    let feasible = certs.iter().all(|c| c.check.feasible);
    let mut channels = Vec::new();
    for (i, cert) in certs.iter().enumerate() {
        channels.push(json!({
            "channel": i,
            "madns": cert.lifted.madns,
            "t_max": cert.t_max,
            "max_t_max": cert.max_t_max,
            "feasible": cert.check.feasible,
            "margin": cert.check.margin,
            "margin_transmit": cert.check.margin_transmit,
            "margin_order": cert.check.margin_order,
            "constants": cert.constants,
            "lifted": cert.lifted,
        }));
        if cfg.output.phi {
            let mut csv = String::from("tau");
            for l in 0..cert.check.trajectories.len() {
                let _ = write!(csv, ",phi_{l}");
            }
            csv.push('\n');
            let tr = &cert.check.trajectories;
            for k in 0..tr[0].values.len() {
                let _ = write!(csv, "{:.14e}", k as f64 * tr[0].step);
                for t in tr {
                    let _ = write!(csv, ",{:.14e}", t.values[k]);
                }
                csv.push('\n');
            }
            write(&c.out, &format!("phi_c{i}.csv"), &csv)?;
        }
    }
    let mut notes = Vec::new();
    if cfg.certificates.phi0.len() == 1 {
        notes.push(format!(
            "phi0 = {} is used as the initial value of every level's phi trajectory",
            cfg.certificates.phi0[0]
        ));
    }
    let out = json!({ "feasible": feasible, "channels": channels, "notes": notes });
    write(&c.out, "certify.json", &pretty(&out))?;
    println!("{}", pretty(&out));
    Ok(if feasible { 0 } else { EXIT_INFEASIBLE })
}

fn certify_grid(c: &Common, cfg: &Config) -> CmdResult {
    let cells = cfg.certify_grid().map_err(build_failure)?;
    let mut csv = String::from("eps_check,madns");
    for i in 0..cfg.channels.len() {
        let _ = write!(csv, ",c{i}_t_max");
    }
    csv.push('\n');
    let mut all_ok = true;
    for cell in &cells {
        let _ = write!(csv, "{},{}", cell.eps_check, cell.madns);
        for v in &cell.t_max {
            match v {
                Some(t) => {
                    let _ = write!(csv, ",{t:.6e}");
                }
                None => {
                    all_ok = false;
                    csv.push(',');
                }
            }
        }
        csv.push('\n');
    }
    write(&c.out, "table2.csv", &csv)?;
    let out = json!({ "feasible": all_ok, "cells": cells });
    write(&c.out, "certify.json", &pretty(&out))?;
    print!("{csv}");
    Ok(if all_ok { 0 } else { EXIT_INFEASIBLE })
}

pub fn simulate(c: &Common) -> CmdResult {
    let cfg = load(c)?;
    let built = cfg.build().map_err(build_failure)?;
    let out = netsim::run(&built.scenario).map_err(run_failure)?;
    let sys = &built.scenario.system;
    let mut verdict: Option<Verdict> = None;
    if !out.trace.is_empty() {
        let u = monitor::evaluate_trace(sys, &out.trace, &built.monitor).map_err(run_failure)?;
        let max_u = u.iter().copied().fold(0.0, f64::max);
        verdict = Some(
            monitor::monitor_trace(sys, &out.trace, &built.monitor, cfg.flow_mode(max_u), monitor::DEFAULT_TOL)
                .map_err(run_failure)?,
        );
        write(&c.out, "trace.csv", &out.trace.to_csv(sys, Some(&u)))?;
        write_figures(&c.out, &out.trace)?;
    } else if cfg.output.trace {
        write(&c.out, "trace.csv", &out.trace.to_csv(sys, None))?;
    }
    let metrics = json!({
        "metrics": out.metrics,
        "t_max": built.certifications.iter().map(|c| c.t_max).collect::<Vec<_>>(),
        "feasible": built.certifications.iter().map(|c| c.check.feasible).collect::<Vec<_>>(),
        "trigger": scenario::profile_name(cfg.trigger.profile),
        "monitor": verdict,
    });
    write(&c.out, "metrics.json", &pretty(&metrics))?;
    write(&c.out, "config.json", &(cfg.to_json() + "\n"))?;
    println!("{}", pretty(&json!(out.metrics)));
    Ok(if out.metrics.certificate_violations > 0 { EXIT_VIOLATION } else { 0 })
}

/// Plot-ready extracts: state trajectories, event rasters and the in-flight staircase.
fn write_figures(dir: &Path, trace: &Trace) -> Result<(), Failure> {
    let Some(first) = trace.rows.first() else { return Ok(()) };
    let n_x = first.state.x.len();
    let mut states = String::from("t");
    for k in 0..n_x {
        let _ = write!(states, ",x_{k}");
    }
    states.push_str(",norm\n");
    let mut events = String::from("t,channel,kind,g_s\n");
    let mut inflight = String::from("t,channel,l,lhat\n");
    for row in &trace.rows {
        let q = &row.state;
        if matches!(row.kind, RowKind::Start | RowKind::Flow) {
            let _ = write!(states, "{:.14e}", q.t);
            for x in &q.x {
                let _ = write!(states, ",{x:.14e}");
            }
            let _ = writeln!(states, ",{:.14e}", q.x.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        if let Some(ch) = row.channel {
            let g = row.g_s.map_or(String::new(), |g| format!("{g:.14e}"));
            let _ = writeln!(events, "{:.14e},{ch},{},{g}", q.t, row.kind.as_str());
            let _ = writeln!(inflight, "{:.14e},{ch},{},{}", q.t, q.channels[ch].l, row.lhat[ch]);
        }
    }
    write(dir, "states.csv", &states)?;
    write(dir, "events.csv", &events)?;
    write(dir, "inflight.csv", &inflight)
}

pub fn sweep(c: &Common) -> CmdResult {
    let cfg = load(c)?;
    let (plan, mut opts) = cfg.sweep_plan().map_err(build_failure)?;
    opts.jobs = c.jobs;
    let cells: Vec<_> = plan.iter().map(|p| p.cell.clone()).collect();
    let summaries = netsim::sweep(&cells, &opts).map_err(run_failure)?;
    let mut csv = String::from(
        "eps_check,profile,channel,t_max,runs,completed,mean_aiet,std_aiet,mean_transmissions,static_mean_aiet\n",
    );
    let mut failures = 0;
    for (p, s) in plan.iter().zip(&summaries) {
        failures += s.failures.len();
        let stat = plan
            .iter()
            .zip(&summaries)
            .find(|(q, _)| q.eps_check == p.eps_check && q.profile == petc_core::trigger::Capability::Static);
        for (i, ch) in s.channels.iter().enumerate() {
            let st = stat.map_or(String::new(), |(_, t)| format!("{:.6e}", t.channels[i].mean_aiet));
            let _ = writeln!(
                csv,
                "{},{},{i},{:.6e},{},{},{:.6e},{:.6e},{:.3},{st}",
                p.eps_check,
                profile_name(p.profile),
                p.t_max[i],
                s.runs,
                s.completed,
                ch.mean_aiet,
                ch.std_aiet,
                ch.mean_transmissions,
            );
        }
    }
    write(&c.out, "sweep.csv", &csv)?;
    write(&c.out, "sweep.json", &pretty(&json!(summaries)))?;
    print!("{csv}");
    if failures > 0 {
        eprintln!("warning: {failures} run(s) failed, see sweep.json");
    }
    Ok(0)
}

pub fn monitor(c: &Common, trace_path: &Path) -> CmdResult {
    let cfg = load(c)?;
    let built = cfg.build().map_err(build_failure)?;
    let text = fs::read_to_string(trace_path).map_err(|e| Failure::config(format!("{}: {e}", trace_path.display())))?;
    let sys = &built.scenario.system;
    let trace = Trace::from_csv(&text, sys).map_err(|e| Failure::config(e.to_string()))?;
    let u = monitor::evaluate_trace(sys, &trace, &built.monitor).map_err(run_failure)?;
    let max_u = u.iter().copied().fold(0.0, f64::max);
    let verdict = monitor::monitor_trace(sys, &trace, &built.monitor, cfg.flow_mode(max_u), monitor::DEFAULT_TOL)
        .map_err(run_failure)?;
    for w in &verdict.warnings {
        eprintln!("warning: {w}");
    }
    let out = pretty(&json!(verdict));
    write(&c.out, "verdict.json", &out)?;
    print!("{out}");
    Ok(if verdict.pass { 0 } else { EXIT_VIOLATION })
}
