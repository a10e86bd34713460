//! Runtime Lyapunov monitor.
//!
//! `U(q) = Ṽ(x) + Σ_i (S̄_i + Ŝ_i + η_i)` with
//! `S̄_i = ρ̄ max{δ̃(v), ϖ(τ̂) δ̃(ṽ)}` and
//! `Ŝ_i = max{γ_l φ_l(τ̂) W̃², ρ̂ δ̃(v)}`.
//! Jumps must not increase `U`; without disturbance `U` must not increase
//! along flows either. With disturbance only a ceiling is checked.

use serde::Serialize;

use crate::error::Result;
use crate::hybrid::{HybridState, NetworkedSystem};
use crate::math::sub;
use crate::netsim::{RowKind, Trace};
use crate::storage::ScalarFn;
use crate::trigger::TriggerPolicy;

/// Default relative tolerance of the checks.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Clone)]
pub struct Certificate {
    pub v: ScalarFn,
    pub policy: TriggerPolicy,
}

impl std::fmt::Debug for Certificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Certificate").field("policy", &self.policy).finish_non_exhaustive()
    }
}

/// Per-channel contributions to `U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelTerms {
    pub s_bar: f64,
    pub s_hat: f64,
    pub eta: f64,
}

pub fn channel_terms(sys: &NetworkedSystem, q: &HybridState, cert: &Certificate, i: usize) -> Result<ChannelTerms> {
    let tr = &cert.policy.channels[i];
    let c = &q.channels[i];
    let v = sys.channel_signal(&q.x, i);
    let dv = (tr.delta_tilde)(&v);
    let dvt = (tr.delta_tilde)(&c.v_tilde);
    let k = &tr.constants;
    let s_bar = k.rho_bar * dv.max(k.varpi(c.tau_hat) * dvt);
    let wt = tr.w_tilde.eval(c.k_bar, c.l, &c.theta, &sub(&c.v_hat, &v));
    let s_hat = (tr.table.gamma_phi(c.l, c.tau_hat)? * wt * wt).max(k.rho_hat * dv);
    Ok(ChannelTerms {
        s_bar,
        s_hat,
        eta: c.eta,
    })
}

/// Evaluates `U` at `q`.
pub fn evaluate_u(sys: &NetworkedSystem, q: &HybridState, cert: &Certificate) -> Result<f64> {
    let mut u = (cert.v)(&q.x);
    for i in 0..q.channels.len() {
        let t = channel_terms(sys, q, cert, i)?;
        u += t.s_bar + t.s_hat + t.eta;
    }
    Ok(u)
}

/// `U` at every trace row.
pub fn evaluate_trace(sys: &NetworkedSystem, trace: &Trace, cert: &Certificate) -> Result<Vec<f64>> {
    trace.rows.iter().map(|r| evaluate_u(sys, &r.state, cert)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Index of the later row of the offending pair.
    pub row: usize,
    pub t: f64,
    pub kind: &'static str,
    pub channel: Option<usize>,
    pub u_before: f64,
    pub u_after: f64,
    /// `U_after − U_before`.
    pub increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub checked: usize,
    pub violations: usize,
    pub first_violation: Option<Violation>,
    /// Largest `(U_after − U_before) / (1 + U_before)`; negative means slack.
    pub worst_margin: f64,
}

impl CheckReport {
    fn new() -> Self {
        Self {
            checked: 0,
            violations: 0,
            first_violation: None,
            worst_margin: f64::NEG_INFINITY,
        }
    }

    fn observe(&mut self, row: usize, kind: RowKind, channel: Option<usize>, t: f64, before: f64, after: f64, tol: f64) {
        self.checked += 1;
        let margin = (after - before) / (1.0 + before.abs());
        self.worst_margin = self.worst_margin.max(margin);
        if margin > tol {
            self.violations += 1;
            if self.first_violation.is_none() {
                self.first_violation = Some(Violation {
                    row,
                    t,
                    kind: kind.as_str(),
                    channel,
                    u_before: before,
                    u_after: after,
                    increase: after - before,
                });
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Jump rows whose `U` exceeds the preceding row's by more than `tol·(1 + U)`.
pub fn check_jump_monotone(trace: &Trace, u: &[f64], tol: f64) -> CheckReport {
    let mut rep = CheckReport::new();
    for r in 1..trace.rows.len() {
        let row = &trace.rows[r];
        if row.kind.is_jump() {
            rep.observe(r, row.kind, row.channel, row.t(), u[r - 1], u[r], tol);
        }
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FlowMode {
    /// Disturbance-free: `U` must not increase over any flow interval.
    Decrease,
    /// Disturbed: `U` must stay below the ceiling.
    Bounded { ceiling: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowReport {
    pub mode: FlowMode,
    pub report: CheckReport,
    pub max_u: f64,
}

/// Checks `U` along flow intervals, in integrated form.
pub fn check_flow_decrease(trace: &Trace, u: &[f64], mode: FlowMode, tol: f64) -> FlowReport {
    let mut rep = CheckReport::new();
    let max_u = u.iter().copied().fold(0.0, f64::max);
    match mode {
        FlowMode::Decrease => {
            for r in 1..trace.rows.len() {
                let row = &trace.rows[r];
                if row.kind == RowKind::Flow {
                    rep.observe(r, row.kind, None, row.t(), u[r - 1], u[r], tol);
                }
            }
        }
        FlowMode::Bounded { ceiling } => {
            for (r, row) in trace.rows.iter().enumerate() {
                rep.observe(r, row.kind, row.channel, row.t(), ceiling, u[r], tol);
            }
        }
    }
    FlowReport {
        mode,
        report: rep,
        max_u,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub rows: usize,
    pub initial_u: Option<f64>,
    pub final_u: Option<f64>,
    pub jumps: CheckReport,
    pub flows: FlowReport,
    pub warnings: Vec<String>,
}

/// Evaluates `U` on a trace and runs both checks.
pub fn monitor_trace(sys: &NetworkedSystem, trace: &Trace, cert: &Certificate, mode: FlowMode, tol: f64) -> Result<Verdict> {
    let u = evaluate_trace(sys, trace, cert)?;
    let jumps = check_jump_monotone(trace, &u, tol);
    let flows = check_flow_decrease(trace, &u, mode, tol);
    let mut warnings = Vec::new();
    if trace.is_empty() {
        warnings.push("empty trace: nothing to check".to_string());
    }
    if matches!(mode, FlowMode::Bounded { .. }) {
        warnings.push("disturbance active: flow check reduced to boundedness".to_string());
    }
    Ok(Verdict {
        pass: jumps.passed() && flows.report.passed(),
        rows: u.len(),
        initial_u: u.first().copied(),
        final_u: u.last().copied(),
        jumps,
        flows,
        warnings,
    })
}
