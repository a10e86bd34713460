//! Dynamic periodic event triggers.
//!
//! At a sampling instant the trigger evaluates `g_s`; a negative value means
//! transmit. The auxiliary variable `η` flows with `f_η` between samples and
//! is reset to `g_s` (no transmission) or `g_t` (transmission). Every bound is
//! implemented with equality, i.e. the largest admissible `η` is kept.
//!
//! Four capability profiles are supported:
//!
//! - `FullInfo`: the trigger knows `l`, `θ`, `v̂` (acknowledgements) and can
//!   integrate `η` continuously.
//! - `NoOde`: no continuous integration; `η` is held and updated only at
//!   samples using worst-case endpoints of the sampling interval.
//! - `NoAck`: no acknowledgements; the in-flight count is bounded by `l̂`
//!   and the trigger takes the worst case over every hypothesis `n ≤ l̂`.
//! - `Static`: `η ≡ 0`.

use std::cell::Cell;
use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::certify::{ChannelCertification, GammaPhiTable, RuntimeConstants};
use crate::error::{Error, Result};
use crate::hybrid::{EtaRule, HybridState, NetworkedSystem};
use crate::math::sub;
use crate::storage::{ChannelCertificate, ScalarFn, WTilde};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    #[serde(rename = "full")]
    FullInfo,
    NoOde,
    NoAck,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerParams {
    /// Decay rate `a` of `η`.
    pub a: f64,
    /// Share `ε` of the `ρ̃ δ̃(ṽ)` inflow that is not credited to `η`.
    pub epsilon: f64,
    /// Floor `π` of `ϖ`.
    pub pi: f64,
}

impl TriggerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::Config(format!("trigger a = {} must be positive", self.a)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("trigger epsilon = {} not in (0, 1)", self.epsilon)));
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::Config(format!("trigger pi = {} not in (0, 1)", self.pi)));
        }
        Ok(())
    }
}

/// Trigger of one channel.
#[derive(Clone)]
pub struct ChannelTrigger {
    pub capability: Capability,
    pub params: TriggerParams,
    pub constants: RuntimeConstants,
    pub table: GammaPhiTable,
    pub w_tilde: WTilde,
    pub delta_tilde: ScalarFn,
    pub delta_hat: ScalarFn,
    pub t_min: f64,
    pub t_max: f64,
    pub madns: usize,
}

impl fmt::Debug for ChannelTrigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChannelTrigger")
            .field("capability", &self.capability)
            .field("params", &self.params)
            .field("constants", &self.constants)
            .field("t_min", &self.t_min)
            .field("t_max", &self.t_max)
            .field("madns", &self.madns)
            .finish_non_exhaustive()
    }
}

impl ChannelTrigger {
    /// Builds a trigger from a certified channel.
    ///
    /// An infeasible certification is rejected unless `allow_uncertified`
    /// is set, which only exists to exercise the monitor on broken designs.
    pub fn new(
        capability: Capability,
        params: TriggerParams,
        cert: &ChannelCertification,
        data: &ChannelCertificate,
        t_min: f64,
        allow_uncertified: bool,
    ) -> Result<Self> {
        params.validate()?;
        if !cert.check.feasible && !allow_uncertified {
            return Err(Error::Certification(format!(
                "T_M = {} fails the feasibility conditions (margin {})",
                cert.t_max, cert.check.margin
            )));
        }
        if !(cert.constants.phi_min > 0.0) {
            return Err(Error::Certification(format!(
                "phi is not positive on [0, {}]",
                cert.t_max
            )));
        }
        if (cert.constants.pi - params.pi).abs() > 0.0 {
            return Err(Error::Config("trigger pi differs from the certified pi".into()));
        }
        Ok(Self {
            capability,
            params,
            constants: cert.constants,
            table: cert.table.clone(),
            w_tilde: cert.lifted.w_tilde().clone(),
            delta_tilde: data.delta.clone(),
            delta_hat: data.delta_bar.clone(),
            t_min,
            t_max: cert.t_max,
            madns: cert.lifted.madns,
        })
    }

    /// `−ρ̄ δ̃(v) + ρ̄ max{δ̃(v), ϖ(τ) δ̃(ṽ)}`.
    fn ledger_terms(&self, dv: f64, dvt: f64, tau: f64) -> f64 {
        let rb = self.constants.rho_bar;
        -rb * dv + rb * dv.max(self.constants.varpi(tau) * dvt)
    }

    /// Storage terms of `g_s`; returns `(value, magnitude)`.
    fn storage_sample(&self, l: usize, wt2: f64, tau: f64, r: f64) -> Result<(f64, f64)> {
        let a = (self.table.gamma_phi(l, 0.0)? * wt2).max(r);
        let b = (self.table.gamma_phi(l, tau)? * wt2).max(r);
        Ok((b - a, a.max(b)))
    }

    /// Storage terms of `g_t`; returns `(value, magnitude)`.
    fn storage_transmit(&self, l: usize, wt2: f64, tau: f64, r: f64) -> Result<(f64, f64)> {
        let lt = self.w_tilde.lambda_tilde;
        let a = (self.table.gamma_phi(l + 1, 0.0)? * lt * lt * wt2).max(r);
        let b = (self.table.gamma_phi(l, tau)? * wt2).max(r);
        Ok((b - a, a.max(b)))
    }
}

/// Transmitter-side memory: recent transmission flags and transmitted values.
#[derive(Debug, Clone, PartialEq)]
pub struct EtLocalState {
    madns: usize,
    lhat: usize,
    flags: VecDeque<bool>,
    /// Post-transmission values `v̄`, oldest first. Starts with the initial
    /// held value `v̂(0) = 0`.
    history: VecDeque<Vec<f64>>,
}

impl EtLocalState {
    pub fn new(dim: usize, madns: usize) -> Self {
        let mut history = VecDeque::with_capacity(madns + 2);
        history.push_back(vec![0.0; dim]);
        Self {
            madns,
            lhat: 0,
            flags: VecDeque::with_capacity(madns),
            history,
        }
    }

    pub fn lhat(&self) -> usize {
        self.lhat
    }

    /// Records a sampling instant and returns the new `l̂`.
    ///
    /// `v_bar` is the transmitted value when the sample was sent.
    pub fn lhat_update(&mut self, v_bar: Option<Vec<f64>>) -> usize {
        if self.madns == 0 {
            self.lhat = 0;
        } else {
            self.flags.push_back(v_bar.is_some());
            while self.flags.len() > self.madns {
                self.flags.pop_front();
            }
            self.lhat = self.flags.iter().filter(|&&f| f).count();
        }
        if let Some(v) = v_bar {
            self.history.push_back(v);
            while self.history.len() > self.madns + 2 {
                self.history.pop_front();
            }
        }
        self.lhat
    }

    /// Hypothesis "`n` packets in flight": the held value `v̌_n` and the
    /// ledger `θ` it implies. `None` if fewer than `n` transmissions are known.
    pub fn hypothesis(&self, n: usize) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
        let len = self.history.len();
        if n + 1 > len {
            return None;
        }
        let base = len - 1 - n;
        let v_check = self.history[base].clone();
        let dim = v_check.len();
        let mut theta = vec![vec![0.0; dim]; self.madns + 1];
        for j in 1..=n {
            theta[j - 1] = sub(&self.history[base + j], &self.history[base + j - 1]);
        }
        Some((v_check, theta))
    }

    /// Latest transmitted value.
    pub fn latest(&self) -> &[f64] {
        self.history.back().expect("history is never empty")
    }
}

/// Per-channel triggers of a system.
#[derive(Debug, Clone)]
pub struct TriggerPolicy {
    pub channels: Vec<ChannelTrigger>,
}

impl TriggerPolicy {
    pub fn new(channels: Vec<ChannelTrigger>) -> Self {
        Self { channels }
    }

    pub fn local_states(&self, sys: &NetworkedSystem) -> Vec<EtLocalState> {
        sys.channels
            .iter()
            .map(|c| EtLocalState::new(c.dim(), c.madns))
            .collect()
    }

    fn true_storage(&self, sys: &NetworkedSystem, q: &HybridState, i: usize, v: &[f64]) -> f64 {
        let c = &q.channels[i];
        let e = sub(&c.v_hat, v);
        let wt = self.channels[i].w_tilde.eval(c.k_bar, c.l, &c.theta, &e);
        let _ = sys;
        wt * wt
    }

    /// `W̃²` for each admissible in-flight hypothesis `n ≤ l̂`.
    fn hypotheses(
        &self,
        q: &HybridState,
        i: usize,
        v: &[f64],
        local: &EtLocalState,
    ) -> Vec<(usize, Vec<f64>, f64)> {
        let tr = &self.channels[i];
        let k_bar = q.channels[i].k_bar;
        (0..=local.lhat())
            .filter_map(|n| {
                local.hypothesis(n).map(|(v_check, theta)| {
                    let e = sub(&v_check, v);
                    let wt = tr.w_tilde.eval(k_bar, n, &theta, &e);
                    (n, v_check, wt * wt)
                })
            })
            .collect()
    }

    /// `f_η` for channel `i`.
    pub fn eta_flow(&self, q: &HybridState, i: usize, local: &EtLocalState) -> f64 {
        let tr = &self.channels[i];
        let c = &q.channels[i];
        let p = tr.params;
        let inflow_tilde = (1.0 - p.epsilon) * tr.constants.rho_tilde * (tr.delta_tilde)(&c.v_tilde);
        match tr.capability {
            Capability::FullInfo => -p.a * c.eta + (tr.delta_hat)(&c.v_hat) + inflow_tilde,
            Capability::NoAck => {
                let mut best = f64::INFINITY;
                for n in 0..=local.lhat() {
                    if let Some((v_check, _)) = local.hypothesis(n) {
                        best = best.min((tr.delta_hat)(&v_check));
                    }
                }
                if !best.is_finite() {
                    best = 0.0;
                }
                -p.a * c.eta + best + inflow_tilde
            }
            Capability::NoOde | Capability::Static => 0.0,
        }
    }

    fn evaluate(
        &self,
        sys: &NetworkedSystem,
        q: &HybridState,
        i: usize,
        local: &EtLocalState,
        transmit: bool,
    ) -> Result<(f64, f64)> {
        let tr = &self.channels[i];
        let c = &q.channels[i];
        let v = sys.channel_signal(&q.x, i);
        let dv = (tr.delta_tilde)(&v);
        let dvt = (tr.delta_tilde)(&c.v_tilde);
        let r = tr.constants.rho_hat * dv;
        let tau = c.tau_hat;
        if tau > tr.t_max * (1.0 + 1e-9) {
            return Err(Error::Certification(format!(
                "channel {i}: tau = {tau} exceeds the certified T_M = {}",
                tr.t_max
            )));
        }
        let storage = |l: usize, wt2: f64, tau: f64| {
            if transmit {
                tr.storage_transmit(l, wt2, tau, r)
            } else {
                tr.storage_sample(l, wt2, tau, r)
            }
        };
        let p = tr.params;
        match tr.capability {
            Capability::FullInfo | Capability::Static => {
                let eta = if tr.capability == Capability::Static { 0.0 } else { c.eta };
                let wt2 = self.true_storage(sys, q, i, &v);
                let ledger = tr.ledger_terms(dv, dvt, tau);
                let (s, mag) = storage(c.l, wt2, tau)?;
                Ok((eta + ledger + s, eta + mag + tr.constants.rho_bar * dv.max(dvt)))
            }
            Capability::NoOde => {
                let k_in = (1.0 - (-p.a * tr.t_min).exp()) / p.a;
                let eta = (-p.a * tr.t_max).exp() * c.eta
                    + k_in * (tr.delta_hat)(&c.v_hat)
                    + k_in * (1.0 - p.epsilon) * tr.constants.rho_tilde * dvt;
                let wt2 = self.true_storage(sys, q, i, &v);
                let ledger = tr.ledger_terms(dv, dvt, tr.t_max);
                let (s, mag) = storage(c.l, wt2, tr.t_max)?;
                Ok((eta + ledger + s, eta + mag + tr.constants.rho_bar * dv.max(dvt)))
            }
            Capability::NoAck => {
                let ledger = tr.ledger_terms(dv, dvt, tau);
                let mut best = f64::INFINITY;
                let mut mag = 0.0f64;
                for (n, _, wt2) in self.hypotheses(q, i, &v, local) {
                    if transmit && n > tr.madns {
                        continue;
                    }
                    let (s, m) = storage(n, wt2, tau)?;
                    best = best.min(s);
                    mag = mag.max(m);
                }
                if !best.is_finite() {
                    return Err(Error::Certification(format!(
                        "channel {i}: no admissible in-flight hypothesis"
                    )));
                }
                Ok((c.eta + ledger + best, c.eta + mag + tr.constants.rho_bar * dv.max(dvt)))
            }
        }
    }

    /// Sampling value `g_s`: transmit iff negative.
    pub fn g_s(&self, sys: &NetworkedSystem, q: &HybridState, i: usize, local: &EtLocalState) -> Result<f64> {
        self.evaluate(sys, q, i, local, false).map(|(v, _)| v)
    }

    /// Post-transmission value `g_t`, unchecked.
    pub fn g_t_raw(&self, sys: &NetworkedSystem, q: &HybridState, i: usize, local: &EtLocalState) -> Result<(f64, f64)> {
        self.evaluate(sys, q, i, local, true)
    }

    /// Post-transmission value `g_t`; a negative value means the
    /// feasibility conditions do not hold at run time.
    pub fn g_t(&self, sys: &NetworkedSystem, q: &HybridState, i: usize, local: &EtLocalState) -> Result<f64> {
        let (v, mag) = self.g_t_raw(sys, q, i, local)?;
        if v < -1e-12 * (1.0 + mag) {
            return Err(Error::Certification(format!(
                "channel {i}: g_t = {v} < 0 at t = {}",
                q.t
            )));
        }
        Ok(v.max(0.0))
    }

    /// The value `η` takes after a sample without transmission.
    pub fn eta_after_sample(&self, sys: &NetworkedSystem, q: &HybridState, i: usize, local: &EtLocalState) -> Result<f64> {
        if self.channels[i].capability == Capability::Static {
            return Ok(0.0);
        }
        Ok(self.g_s(sys, q, i, local)?.max(0.0))
    }

    /// The value `η` takes after a transmission.
    pub fn eta_after_transmit(&self, sys: &NetworkedSystem, q: &HybridState, i: usize, local: &EtLocalState) -> Result<f64> {
        let eta = self.g_t(sys, q, i, local)?;
        if self.channels[i].capability == Capability::Static {
            return Ok(0.0);
        }
        Ok(eta)
    }
}

/// A policy together with the transmitter memories, usable by the hybrid model.
pub struct BoundTrigger<'a> {
    pub policy: &'a TriggerPolicy,
    pub locals: &'a [EtLocalState],
    /// When false, a negative `g_t` is clamped to zero and counted instead
    /// of aborting the run.
    pub strict: bool,
    pub violations: Cell<usize>,
}

impl<'a> BoundTrigger<'a> {
    pub fn new(policy: &'a TriggerPolicy, locals: &'a [EtLocalState], strict: bool) -> Self {
        Self {
            policy,
            locals,
            strict,
            violations: Cell::new(0),
        }
    }
}

impl EtaRule for BoundTrigger<'_> {
    fn eta_flow(&self, _sys: &NetworkedSystem, q: &HybridState, i: usize) -> f64 {
        self.policy.eta_flow(q, i, &self.locals[i])
    }

    fn eta_after_sample(&self, sys: &NetworkedSystem, q: &HybridState, i: usize) -> Result<f64> {
        self.policy.eta_after_sample(sys, q, i, &self.locals[i])
    }

    fn eta_after_transmit(&self, sys: &NetworkedSystem, q: &HybridState, i: usize) -> Result<f64> {
        match self.policy.eta_after_transmit(sys, q, i, &self.locals[i]) {
            Err(e) if !self.strict && e.is_certification() => {
                self.violations.set(self.violations.get() + 1);
                Ok(0.0)
            }
            other => other,
        }
    }
}
