//! Closed-loop checks on the two built-in scenarios.

use std::time::{Duration, Instant};

use petc_core::hybrid::{transmission_error, HybridState, NetworkedSystem};
use petc_core::monitor::{self, FlowMode, DEFAULT_TOL};
use petc_core::netsim::{self, derive_seed, Disturbance, RowKind, RunOutput, Scenario};
use petc_core::registry::Example2Params;
use petc_core::scenario::{self, Built, Config, SweepConfig};
use petc_core::trigger::{Capability, EtLocalState, TriggerPolicy};

use crate::Outcome;

/// Seeds as the command line sets them with `--seed s`.
fn seeded(sc: &Scenario, s: u64) -> Scenario {
    let mut sc = sc.clone();
    sc.schedule_seed = derive_seed(s, 0, 1);
    sc.delay_seed = derive_seed(s, 0, 2);
    sc
}

fn preset(name: &str) -> Config {
    scenario::preset(name).expect("preset exists")
}

fn build(cfg: &Config) -> Result<Built, Outcome> {
    cfg.build()
        .map_err(|e| Outcome::new(false, format!("certification failed: {e}")))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn aiets(out: &RunOutput) -> Vec<f64> {
    out.metrics.channels.iter().map(|c| c.aiet.unwrap_or(f64::NAN)).collect()
}

pub fn in_flight_bound() -> Outcome {
    let mut cfg = preset("example1");
    cfg.output.trace = false;
    let b = match build(&cfg) {
        Ok(b) => b,
        Err(o) => return o,
    };
    let mut samples = 0;
    let mut violations = 0;
    let mut max_l = 0;
    let mut errors = Vec::new();
    for s in 0..50 {
        match netsim::run(&seeded(&b.scenario, s)) {
            Ok(out) => {
                for c in &out.metrics.channels {
                    samples += c.samples;
                    violations += c.lhat_bound_violations;
                    max_l = max_l.max(c.max_l_at_sample);
                }
            }
            Err(e) => errors.push(format!("seed {s}: {e}")),
        }
    }
    let mut out = Outcome::new(
        violations == 0 && errors.is_empty() && samples > 0,
        format!("50 runs, D = 1, {samples} sampling instants, {violations} with l > l̂, max pre-jump l = {max_l}"),
    );
    out.notes = errors;
    out
}

pub fn monitor() -> Outcome {
    let cfg = preset("example2");
    let b = match build(&cfg) {
        Ok(b) => b,
        Err(o) => return o,
    };
    let sys = &b.scenario.system;
    let (mut jump_checked, mut jump_bad, mut flow_checked, mut flow_bad) = (0, 0, 0, 0);
    let mut worst_flow = f64::NEG_INFINITY;
    let mut notes = Vec::new();
    for s in 0..20 {
        let verdict = netsim::run(&seeded(&b.scenario, s))
            .and_then(|out| monitor::monitor_trace(sys, &out.trace, &b.monitor, FlowMode::Decrease, DEFAULT_TOL));
        match verdict {
            Ok(v) => {
                jump_checked += v.jumps.checked;
                jump_bad += v.jumps.violations;
                flow_checked += v.flows.report.checked;
                flow_bad += v.flows.report.violations;
                worst_flow = worst_flow.max(v.flows.report.worst_margin);
                if s == 0 {
                    if let Some(f) = v.flows.report.first_violation {
                        notes.push(format!(
                            "seed 0 first flow violation at t = {:.4} s: U {:.6e} -> {:.6e}",
                            f.t, f.u_before, f.u_after
                        ));
                    }
                }
            }
            Err(e) => {
                jump_bad += 1;
                notes.push(format!("seed {s}: {e}"));
            }
        }
    }

    let mut sab = preset("sabotage");
    sab.simulation.horizon = 2.0;
    let sabotage = sab.build().and_then(|sb| {
        let out = netsim::run(&sb.scenario)?;
        let v = monitor::monitor_trace(&sb.scenario.system, &out.trace, &sb.monitor, FlowMode::Decrease, DEFAULT_TOL)?;
        Ok((v, out.metrics.certificate_violations))
    });
    let sabotage_flagged = match &sabotage {
        Ok((v, clamped)) => {
            notes.push(format!(
                "sabotage (T_M x3, 2 s): {} jump + {} flow violations, {clamped} negative g_t clamped",
                v.jumps.violations, v.flows.report.violations
            ));
            !v.pass
        }
        Err(e) => {
            notes.push(format!("sabotage run failed: {e}"));
            false
        }
    };

    // Same check with gravity cancelled, where the shipped quadratic V is a
    // Lyapunov function of the continuous loop.
    let mut comp = cfg.clone();
    comp.plant.params = serde_json::to_value(Example2Params::gravity_compensated()).expect("serialisable");
    if let Ok(cb) = comp.build() {
        let mut bad = 0;
        for s in 0..20 {
            let ok = netsim::run(&seeded(&cb.scenario, s))
                .and_then(|out| {
                    monitor::monitor_trace(&cb.scenario.system, &out.trace, &cb.monitor, FlowMode::Decrease, DEFAULT_TOL)
                })
                .map(|v| v.pass)
                .unwrap_or(false);
            bad += usize::from(!ok);
        }
        notes.push(format!("gravity-compensated arm: {} of 20 seeds pass both checks", 20 - bad));
    }

    let mut out = Outcome::new(
        jump_bad == 0 && flow_bad == 0 && sabotage_flagged,
        format!(
            "example2, 20 seeds: jumps {jump_bad}/{jump_checked} violations, flows {flow_bad}/{flow_checked} violations \
             (worst relative increase {worst_flow:.2e}); sabotage flagged: {sabotage_flagged}"
        ),
    );
    out.notes = notes;
    out
}

/// Reference mean AIET in seconds per `ε̌ ∈ {1, 0.5, 0.1, 0.01}`, channels 1 and 2.
pub const TABLE3: [(f64, [f64; 2]); 4] = [
    (1.0, [0.0143, 0.0144]),
    (0.5, [0.0166, 0.0166]),
    (0.1, [0.0235, 0.0234]),
    (0.01, [0.0313, 0.0312]),
];

fn sweep_means(cfg: &Config) -> Result<Vec<(f64, Capability, Vec<f64>)>, String> {
    let (plan, opts) = cfg.sweep_plan().map_err(|e| e.to_string())?;
    let cells: Vec<_> = plan.iter().map(|p| p.cell.clone()).collect();
    let summaries = netsim::sweep(&cells, &opts).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for (p, s) in plan.iter().zip(&summaries) {
        if !s.failures.is_empty() {
            return Err(format!("{}: {} failed runs, first: {}", s.label, s.failures.len(), s.failures[0].1));
        }
        rows.push((p.eps_check, p.profile, s.channels.iter().map(|c| c.mean_aiet).collect()));
    }
    Ok(rows)
}

pub fn table3() -> Outcome {
    let start = Instant::now();
    let mut cfg = preset("table3");
    if let Some(s) = cfg.sweep.as_mut() {
        s.profiles = vec![Capability::FullInfo];
    }
    let rows = match sweep_means(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e),
    };
    let mut monotone = true;
    let mut within = true;
    let mut notes = Vec::new();
    for ch in 0..2 {
        let got: Vec<f64> = TABLE3.iter().map(|(eps, _)| rows.iter().find(|r| r.0 == *eps).map_or(f64::NAN, |r| r.2[ch])).collect();
        monotone &= got.windows(2).all(|w| w[1] > w[0]);
        let mut cells = Vec::new();
        for ((_, want), g) in TABLE3.iter().zip(&got) {
            let rel = (g - want[ch]) / want[ch];
            within &= rel.abs() <= 0.25;
            cells.push(format!("{g:.4} ({:+.0}%)", 100.0 * rel));
        }
        notes.push(format!("C{}: {}", ch + 1, cells.join(", ")));
    }
    // Sensitivity: the same sweep without the disturbance.
    let mut calm = cfg.clone();
    calm.simulation.disturbance = Disturbance::Zero;
    match sweep_means(&calm) {
        Ok(r) => notes.push(format!(
            "with w = 0, C1: {}",
            r.iter().map(|x| format!("{:.4}", x.2[0])).collect::<Vec<_>>().join(", ")
        )),
        Err(e) => notes.push(format!("w = 0 sweep failed: {e}")),
    }
    let mut out = Outcome::new(
        monotone && within,
        format!("50 runs per eps_check in (1, 0.5, 0.1, 0.01): strictly increasing {monotone}, all cells within 25% {within}"),
    );
    out.notes = notes;
    out.within(start.elapsed(), Duration::from_secs(600))
}

pub fn example1() -> Outcome {
    let mut cfg = preset("example1");
    cfg.output.trace = false;
    let b = match build(&cfg) {
        Ok(b) => b,
        Err(o) => return o,
    };
    let out = match netsim::run(&b.scenario) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, format!("run failed: {e}")),
    };
    let m = &out.metrics;
    let a = aiets(&out);
    let bounded = m.max_norm_after_transient <= 1.1 * m.initial_norm;
    let in_band = a.iter().all(|t| (0.012..=0.020).contains(t));
    Outcome::new(
        bounded && in_band && m.certificate_violations == 0,
        format!(
            "max ‖x‖ after {} s = {:.4} vs ‖x(0)‖ = {:.4}; AIET = {:.5} / {:.5} s (band [0.012, 0.020]); T_M = {:.6} s",
            b.scenario.options.transient,
            m.max_norm_after_transient,
            m.initial_norm,
            a[0],
            a[1],
            b.certifications[0].t_max
        ),
    )
    .note(format!("final ‖x(10)‖ = {:.4}", m.final_norm))
}

/// Calls `f(pre-jump state, channel, transmitter memory)` at every sampling
/// row, rebuilding the memories from the transmissions in the trace.
fn for_each_sample(sys: &NetworkedSystem, out: &RunOutput, mut f: impl FnMut(&HybridState, usize, &EtLocalState)) {
    let mut locals: Vec<EtLocalState> = sys.channels.iter().map(|c| EtLocalState::new(c.dim(), c.madns)).collect();
    let rows = &out.trace.rows;
    for r in 1..rows.len() {
        let row = &rows[r];
        if !matches!(row.kind, RowKind::Sample | RowKind::Transmit) {
            continue;
        }
        let i = row.channel.expect("sample rows carry a channel");
        f(&rows[r - 1].state, i, &locals[i]);
        let v_bar = (row.kind == RowKind::Transmit).then(|| {
            let v = sys.channel_signal(&row.state.x, i);
            let eb = transmission_error(sys, &row.state, i);
            v.iter().zip(&eb).map(|(a, b)| a + b).collect()
        });
        locals[i].lhat_update(v_bar);
    }
}

/// Per-decision check: the static value never exceeds the dynamic one.
fn decision_dominance(cfg: &Config) -> Result<(usize, usize), String> {
    let mut cfg = cfg.clone();
    cfg.simulation.horizon = 2.0;
    let b = cfg.build_with(Capability::FullInfo).map_err(|e| e.to_string())?;
    let stat: TriggerPolicy = cfg.build_with(Capability::Static).map_err(|e| e.to_string())?.scenario.policy;
    let sys = &b.scenario.system;
    let out = netsim::run(&b.scenario).map_err(|e| e.to_string())?;
    let (mut checked, mut bad) = (0, 0);
    for_each_sample(sys, &out, |q, i, local| {
        let d = b.scenario.policy.g_s(sys, q, i, local);
        let s = stat.g_s(sys, q, i, local);
        checked += 1;
        match (d, s) {
            (Ok(d), Ok(s)) if s <= d => {}
            _ => bad += 1,
        }
    });
    Ok((checked, bad))
}

fn paired_means(cfg: &Config, x0_box: Vec<(f64, f64)>) -> Result<[Vec<f64>; 2], String> {
    let mut cfg = cfg.clone();
    cfg.output.trace = false;
    cfg.sweep = Some(SweepConfig {
        runs: 20,
        x0_box,
        master_seed: 7,
        eps_check: Vec::new(),
        profiles: vec![Capability::FullInfo, Capability::Static],
    });
    let rows = sweep_means(&cfg)?;
    Ok([rows[0].2.clone(), rows[1].2.clone()])
}

pub fn dominance() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut notes = Vec::new();
    let ex2 = preset("example2");
    let x0: Vec<(f64, f64)> = ex2.simulation.x0.iter().map(|&v| (v, v)).collect();
    for (name, cfg, bx) in [
        ("example1", preset("example1"), vec![(-10.0, 10.0); 2]),
        ("example2", ex2.clone(), x0),
    ] {
        match decision_dominance(&cfg) {
            Ok((checked, bad)) => {
                pass &= bad == 0 && checked > 0;
                notes.push(format!("{name}: {checked} sampling decisions, {bad} with static > dynamic"));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("{name}: {e}"));
            }
        }
        match paired_means(&cfg, bx) {
            Ok([dynamic, stat]) => {
                let ok = dynamic.iter().zip(&stat).all(|(d, s)| d >= s);
                pass &= ok;
                let fmt = |v: &[f64]| v.iter().map(|t| format!("{t:.5}")).collect::<Vec<_>>().join("/");
                parts.push(format!("{name} dynamic {} vs static {}", fmt(&dynamic), fmt(&stat)));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("{name} sweep: {e}"));
            }
        }
    }
    let mut out = Outcome::new(pass, format!("mean AIET over 20 paired runs: {}", parts.join("; ")));
    out.notes = notes;
    out
}

pub fn example2() -> Outcome {
    let mut cfg = preset("example2");
    cfg.output.trace = false;
    let b = match build(&cfg) {
        Ok(b) => b,
        Err(o) => return o,
    };
    let mut finals = Vec::new();
    let mut a = Vec::new();
    let mut notes = Vec::new();
    for s in 0..20 {
        match netsim::run(&seeded(&b.scenario, s)) {
            Ok(out) => {
                finals.push(out.metrics.final_norm);
                a.push(aiets(&out)[0]);
            }
            Err(e) => notes.push(format!("seed {s}: {e}")),
        }
    }
    let worst = finals.iter().copied().fold(0.0, f64::max);
    let m = mean(&a);
    let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().copied().fold(0.0, f64::max);
    let converged = finals.len() == 20 && worst < 1e-2;
    let in_band = (m - 0.0045).abs() <= 0.3 * 0.0045;
    let cert = &b.certifications[0];
    notes.push(format!(
        "T_M = {} s certified: {} (largest feasible {:.6} s), with φ_l(0) = {} for every level \
         (a quoted rate φ̇ = 1.2 is read as this initial value)",
        cert.t_max,
        cert.check.feasible,
        cert.max_t_max.unwrap_or(f64::NAN),
        cfg.certificates.phi0[0]
    ));
    let mut out = Outcome::new(
        converged && in_band,
        format!("20 seeds: max ‖x(10)‖ = {worst:.2e} (< 1e-2), mean AIET = {m:.5} s in [{lo:.5}, {hi:.5}] (target 0.0045 ± 30%)"),
    );
    out.notes.append(&mut notes);
    out
}
