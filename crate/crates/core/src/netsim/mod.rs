//! Event-driven execution of the closed loop.
//!
//! Schedules are drawn up front. The executor repeatedly picks the earliest
//! pending event (a sampling instant or a packet arrival), integrates the
//! flow up to it with fixed RK4 substeps and applies the jump. Same-time
//! events are processed in ascending channel order, arrivals before samples.

mod schedule;
mod sweep;
mod trace;

pub use schedule::{derive_seed, draw_delay, DelayModel, SamplingSchedule, ORDER_EPS};
pub use sweep::{draw_x0, sweep, CellSummary, ChannelSummary, SweepCell, SweepOptions};
pub use trace::{PacketRecord, RowKind, Trace, TraceRow};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{
    flow_field, jump_arrival, jump_sample_only, jump_transmit, transmission_error, HybridState,
    NetworkedSystem, NextAction,
};
use crate::math::{add, norm};
use crate::trigger::{BoundTrigger, EtLocalState, TriggerPolicy};

/// External disturbance `w(t)`, applied identically to every component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Disturbance {
    #[default]
    Zero,
    /// `amplitude · sin(2π · frequency · t)`.
    Sine { amplitude: f64, frequency: f64 },
}

impl Disturbance {
    pub fn eval(&self, t: f64, n_w: usize) -> Vec<f64> {
        let w = match *self {
            Disturbance::Zero => 0.0,
            Disturbance::Sine {
                amplitude,
                frequency,
            } => amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin(),
        };
        vec![w; n_w]
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Disturbance::Zero)
            || matches!(self, Disturbance::Sine { amplitude, .. } if *amplitude == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    /// Metrics only.
    None,
    /// One row per jump plus one at the end of every flow interval.
    #[default]
    Events,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Largest RK4 substep; defaults to `min(T_m / 20, 1e-4)` over channels.
    pub substep_max: Option<f64>,
    pub record: RecordMode,
    /// Abort on a negative post-transmission value instead of clamping it.
    pub strict: bool,
    /// Start of the window used for `max_norm_after_transient`.
    pub transient: f64,
    /// Sampling upper bounds used by the schedule instead of the certified ones.
    pub schedule_t_max: Option<Vec<f64>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            substep_max: None,
            record: RecordMode::Events,
            strict: true,
            transient: 1.0,
            schedule_t_max: None,
        }
    }
}

/// Everything a run needs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: NetworkedSystem,
    pub policy: TriggerPolicy,
    pub x0: Vec<f64>,
    pub disturbance: Disturbance,
    pub horizon: f64,
    pub schedule_seed: u64,
    pub delay_seed: u64,
    pub options: RunOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChannelMetrics {
    pub samples: usize,
    pub transmissions: usize,
    pub arrivals: usize,
    /// Mean gap between consecutive transmissions.
    pub aiet: Option<f64>,
    pub first_transmission: Option<f64>,
    pub last_transmission: Option<f64>,
    pub max_l_at_sample: usize,
    pub max_lhat: usize,
    /// Samples at which the pre-jump `l` exceeded `l̂`.
    pub lhat_bound_violations: usize,
    pub min_eta: f64,
    pub max_eta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub channels: Vec<ChannelMetrics>,
    pub initial_norm: f64,
    pub final_norm: f64,
    pub final_time: f64,
    pub max_norm: f64,
    pub max_norm_after_transient: f64,
    pub jumps: u64,
    /// Negative post-transmission values clamped in non-strict runs.
    pub certificate_violations: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub metrics: Metrics,
    pub schedule: SamplingSchedule,
    pub final_state: HybridState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Arrival,
    Sample,
}

struct ChannelRuntime {
    next_sample: usize,
    pending: VecDeque<(f64, usize)>,
    last_arrival: Option<f64>,
    transmissions: Vec<f64>,
}

struct Executor<'a> {
    sc: &'a Scenario,
    schedule: SamplingSchedule,
    delays: DelayModel,
    q: HybridState,
    locals: Vec<EtLocalState>,
    runtime: Vec<ChannelRuntime>,
    trace: Trace,
    metrics: Metrics,
    h_max: f64,
}

impl<'a> Executor<'a> {
    fn new(sc: &'a Scenario) -> Result<Self> {
        let sys = &sc.system;
        if sc.policy.channels.len() != sys.channels.len() {
            return Err(Error::Config("one trigger per channel is required".into()));
        }
        let schedule = SamplingSchedule::generate(
            &sys.channels,
            sc.horizon,
            sc.schedule_seed,
            sc.options.schedule_t_max.as_deref(),
        );
        let delays = DelayModel::new(sys.channels.iter().map(|c| c.madns).collect(), sc.delay_seed);
        let q = sys.initial_state(&sc.x0)?;
        let default_h = sys
            .channels
            .iter()
            .map(|c| c.t_min / 20.0)
            .fold(1e-4, f64::min);
        let h_max = sc.options.substep_max.unwrap_or(default_h);
        if !(h_max > 0.0) {
            return Err(Error::Config(format!("substep {h_max} must be positive")));
        }
        let n0 = norm(&q.x);
        let metrics = Metrics {
            channels: vec![
                ChannelMetrics {
                    min_eta: f64::INFINITY,
                    ..Default::default()
                };
                sys.channels.len()
            ],
            initial_norm: n0,
            final_norm: n0,
            max_norm: n0,
            max_norm_after_transient: if sc.options.transient <= 0.0 { n0 } else { 0.0 },
            ..Default::default()
        };
        Ok(Self {
            locals: sc.policy.local_states(sys),
            runtime: (0..sys.channels.len())
                .map(|_| ChannelRuntime {
                    next_sample: 0,
                    pending: VecDeque::new(),
                    last_arrival: None,
                    transmissions: Vec::new(),
                })
                .collect(),
            sc,
            schedule,
            delays,
            q,
            trace: Trace::default(),
            metrics,
            h_max,
        })
    }

    fn lhats(&self) -> Vec<usize> {
        self.locals.iter().map(|l| l.lhat()).collect()
    }

    fn record(&mut self, kind: RowKind, channel: Option<usize>, g_s: Option<f64>, pre: Option<(usize, usize)>) {
        if self.sc.options.record == RecordMode::None {
            return;
        }
        let lhat = self.lhats();
        self.trace.rows.push(TraceRow {
            kind,
            channel,
            state: self.q.clone(),
            lhat,
            g_s,
            pre_l: pre.map(|p| p.0),
            pre_lhat: pre.map(|p| p.1),
        });
    }

    fn observe_norm(&mut self) {
        let n = norm(&self.q.x);
        self.metrics.max_norm = self.metrics.max_norm.max(n);
        if self.q.t >= self.sc.options.transient {
            self.metrics.max_norm_after_transient = self.metrics.max_norm_after_transient.max(n);
        }
        for (m, c) in self.metrics.channels.iter_mut().zip(&self.q.channels) {
            m.min_eta = m.min_eta.min(c.eta);
            m.max_eta = m.max_eta.max(c.eta);
        }
    }

    fn next_event(&self) -> Option<(f64, usize, EventKind)> {
        let mut best: Option<(f64, usize, EventKind)> = None;
        for (i, rt) in self.runtime.iter().enumerate() {
            let sample = self.schedule.instants[i].get(rt.next_sample).copied();
            let cand = match (rt.pending.front(), sample) {
                (Some(&(a, _)), Some(s)) if a <= s => Some((a, EventKind::Arrival)),
                (Some(&(a, _)), None) => Some((a, EventKind::Arrival)),
                (_, Some(s)) => Some((s, EventKind::Sample)),
                (None, None) => None,
            };
            if let Some((t, k)) = cand {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, i, k));
                }
            }
        }
        best
    }

    /// Integrates `x` and `η` from the current time to `t_end`.
    fn flow_to(&mut self, t_end: f64) -> Result<()> {
        let span = t_end - self.q.t;
        if span <= 0.0 {
            return Ok(());
        }
        let sys = &self.sc.system;
        let n = (span / self.h_max).ceil().max(1.0) as usize;
        let h = span / n as f64;
        let n_w = sys.plant.n_w;
        let t0 = self.q.t;
        let rule = BoundTrigger::new(&self.sc.policy, &self.locals, self.sc.options.strict);
        let q = &mut self.q;
        let tau0: Vec<f64> = q.channels.iter().map(|c| c.tau_hat).collect();
        for step in 0..n {
            let ts = t0 + step as f64 * h;
            let x0 = q.x.clone();
            let eta0: Vec<f64> = q.channels.iter().map(|c| c.eta).collect();
            let set_stage = |q: &mut HybridState, dx: &[f64], deta: &[f64], c: f64, t: f64| {
                q.x = x0.iter().zip(dx).map(|(a, b)| a + c * b).collect();
                for (k, ch) in q.channels.iter_mut().enumerate() {
                    ch.eta = eta0[k] + c * deta[k];
                    ch.tau_hat = tau0[k] + (t - t0);
                }
                q.t = t;
            };
            let zero_x = vec![0.0; x0.len()];
            let zero_e = vec![0.0; eta0.len()];
            set_stage(q, &zero_x, &zero_e, 0.0, ts);
            let k1 = flow_field(sys, q, &self.sc.disturbance.eval(ts, n_w), &rule)?;
            set_stage(q, &k1.x, &k1.eta, 0.5 * h, ts + 0.5 * h);
            let k2 = flow_field(sys, q, &self.sc.disturbance.eval(ts + 0.5 * h, n_w), &rule)?;
            set_stage(q, &k2.x, &k2.eta, 0.5 * h, ts + 0.5 * h);
            let k3 = flow_field(sys, q, &self.sc.disturbance.eval(ts + 0.5 * h, n_w), &rule)?;
            set_stage(q, &k3.x, &k3.eta, h, ts + h);
            let k4 = flow_field(sys, q, &self.sc.disturbance.eval(ts + h, n_w), &rule)?;
            let dx: Vec<f64> = (0..x0.len())
                .map(|k| (k1.x[k] + 2.0 * k2.x[k] + 2.0 * k3.x[k] + k4.x[k]) / 6.0)
                .collect();
            let de: Vec<f64> = (0..eta0.len())
                .map(|k| (k1.eta[k] + 2.0 * k2.eta[k] + 2.0 * k3.eta[k] + k4.eta[k]) / 6.0)
                .collect();
            let t_next = if step + 1 == n { t_end } else { ts + h };
            set_stage(q, &dx, &de, h, t_next);
            for ch in q.channels.iter_mut() {
                // η solves a linear ODE with non-negative forcing; only
                // round-off can make it negative.
                ch.eta = ch.eta.max(0.0);
            }
            if let Some(k) = q.x.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical {
                    what: "state after flow step".into(),
                    channel: None,
                    component: Some(k),
                });
            }
        }
        self.observe_norm();
        Ok(())
    }

    fn update_next_action(&mut self, i: usize) -> Result<()> {
        let rt = &self.runtime[i];
        let sample = self.schedule.instants[i].get(rt.next_sample).copied();
        let action = match (rt.pending.front(), sample) {
            (Some(&(a, _)), Some(s)) if a <= s => NextAction::Update,
            (Some(_), None) => NextAction::Update,
            _ => NextAction::Transmit,
        };
        self.q.set_next_action(i, action)
    }

    fn sample(&mut self, i: usize) -> Result<()> {
        let sys = &self.sc.system;
        let j = self.runtime[i].next_sample;
        let pre_l = self.q.channels[i].l;
        let pre_lhat = self.locals[i].lhat();
        {
            let m = &mut self.metrics.channels[i];
            m.samples += 1;
            m.max_l_at_sample = m.max_l_at_sample.max(pre_l);
            if pre_l > pre_lhat {
                m.lhat_bound_violations += 1;
            }
        }
        if pre_l > sys.channels[i].madns {
            return Err(Error::ProtocolViolation {
                channel: i,
                reason: format!("l = {pre_l} exceeds D at a sampling instant"),
            });
        }
        let g_s = self.sc.policy.g_s(sys, &self.q, i, &self.locals[i])?;
        // The first sampling instant is also the first transmission.
        let transmit = j == 0 || g_s < 0.0;
        let (next, kind, v_bar, cert_violations) = {
            let rule = BoundTrigger::new(&self.sc.policy, &self.locals, self.sc.options.strict);
            if transmit {
                let next = jump_transmit(sys, &self.q, i, &rule)?;
                let v = sys.channel_signal(&next.x, i);
                let v_bar = add(&v, &transmission_error(sys, &next, i));
                (next, RowKind::Transmit, Some(v_bar), rule.violations.get())
            } else {
                let next = jump_sample_only(sys, &self.q, i, &rule)?;
                (next, RowKind::Sample, None, rule.violations.get())
            }
        };
        self.metrics.certificate_violations += cert_violations;
        self.q = next;
        self.q.t = self.schedule.instants[i][j];
        self.runtime[i].next_sample += 1;
        if transmit {
            let u = self.delays.draw_u(i);
            let rt = &self.runtime[i];
            let madns = sys.channels[i].madns;
            let arrival = draw_delay(&self.schedule, i, madns, j, u, rt.last_arrival)?;
            let bound = self.schedule.instants[i][j + madns + 1];
            let rt = &mut self.runtime[i];
            rt.pending.push_back((arrival, j));
            rt.last_arrival = Some(arrival);
            rt.transmissions.push(self.q.t);
            self.trace.packets.push(PacketRecord {
                channel: i,
                sample_index: j,
                sent: self.q.t,
                arrival,
                bound,
            });
        }
        let lhat = self.locals[i].lhat_update(v_bar);
        let m = &mut self.metrics.channels[i];
        m.max_lhat = m.max_lhat.max(lhat);
        if transmit {
            m.transmissions += 1;
        }
        self.update_next_action(i)?;
        self.record(kind, Some(i), Some(g_s), Some((pre_l, pre_lhat)));
        Ok(())
    }

    fn arrival(&mut self, i: usize) -> Result<()> {
        self.q = jump_arrival(&self.sc.system, &self.q, i)?;
        self.runtime[i].pending.pop_front();
        self.metrics.channels[i].arrivals += 1;
        self.update_next_action(i)?;
        self.record(RowKind::Arrival, Some(i), None, None);
        Ok(())
    }

    fn finish(mut self) -> RunOutput {
        for (m, rt) in self.metrics.channels.iter_mut().zip(&self.runtime) {
            m.first_transmission = rt.transmissions.first().copied();
            m.last_transmission = rt.transmissions.last().copied();
            if rt.transmissions.len() >= 2 {
                let n = rt.transmissions.len();
                m.aiet = Some((rt.transmissions[n - 1] - rt.transmissions[0]) / (n - 1) as f64);
            }
            if !m.min_eta.is_finite() {
                m.min_eta = 0.0;
            }
        }
        self.metrics.final_norm = norm(&self.q.x);
        self.metrics.final_time = self.q.t;
        self.metrics.jumps = self.q.j;
        RunOutput {
            trace: self.trace,
            metrics: self.metrics,
            schedule: self.schedule,
            final_state: self.q,
        }
    }
}

/// Runs one scenario.
///
/// Errors carry the simulated time and the number of recorded rows.
pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    let exec = Executor::new(scenario)?;
    let mut t = 0.0;
    let mut rows = 0usize;
    run_inner(exec, &mut t, &mut rows).map_err(|e| Error::Runtime {
        source: Box::new(e),
        t,
        rows,
    })
}

fn run_inner(exec: Executor<'_>, t: &mut f64, rows: &mut usize) -> Result<RunOutput> {
    let mut exec = exec;
    if exec.sc.horizon <= 0.0 {
        return Ok(exec.finish());
    }
    exec.record(RowKind::Start, None, None, None);
    loop {
        *t = exec.q.t;
        *rows = exec.trace.rows.len();
        let Some((te, i, kind)) = exec.next_event() else { break };
        if te > exec.sc.horizon {
            break;
        }
        if te > exec.q.t {
            exec.flow_to(te)?;
            exec.record(RowKind::Flow, None, None, None);
        }
        match kind {
            EventKind::Arrival => exec.arrival(i)?,
            EventKind::Sample => exec.sample(i)?,
        }
        exec.q.check_invariants()?;
        exec.observe_norm();
    }
    if exec.q.t < exec.sc.horizon {
        exec.flow_to(exec.sc.horizon)?;
        exec.record(RowKind::Flow, None, None, None);
    }
    Ok(exec.finish())
}

/// Checks every recorded packet against its delay bound and the no-disorder rule.
pub fn check_packets(trace: &Trace) -> Result<()> {
    let mut last: Vec<Option<f64>> = Vec::new();
    for p in &trace.packets {
        if last.len() <= p.channel {
            last.resize(p.channel + 1, None);
        }
        if p.arrival < p.sent || p.arrival > p.bound {
            return Err(Error::ProtocolViolation {
                channel: p.channel,
                reason: format!("packet of sample {} arrives outside [{}, {}]", p.sample_index, p.sent, p.bound),
            });
        }
        if let Some(prev) = last[p.channel] {
            if p.arrival <= prev {
                return Err(Error::ProtocolViolation {
                    channel: p.channel,
                    reason: format!("arrival {} not after previous arrival {prev}", p.arrival),
                });
            }
        }
        last[p.channel] = Some(p.arrival);
    }
    Ok(())
}
