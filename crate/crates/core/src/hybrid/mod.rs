//! Closed-loop hybrid model: flow field, jump maps and the `θ` ledger.
//!
//! The updating error `e = v̂ − g_v(x)` is never stored. Between events `v̂`
//! is held, so `e` is recovered exactly from the current state.

mod plant;
mod state;

pub use plant::{ControllerFlowFn, OutputFn, PlantFlowFn, PlantModel};
pub use state::{ChannelState, HybridState, NextAction};

use std::ops::Range;

use crate::error::{Error, Result};
use crate::math::{add_assign, all_finite, sub};
use crate::protocols::Protocol;

/// One network channel: a contiguous slice of `v` with its protocol,
/// delay budget (MADNS `D`) and sampling bounds.
#[derive(Debug, Clone)]
pub struct ChannelSpec {
    pub offset: usize,
    pub protocol: Protocol,
    pub madns: usize,
    pub t_min: f64,
    pub t_max: f64,
}

impl ChannelSpec {
    pub fn dim(&self) -> usize {
        self.protocol.dim()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.dim()
    }
}

#[derive(Debug, Clone)]
pub struct NetworkedSystem {
    pub plant: PlantModel,
    pub channels: Vec<ChannelSpec>,
}

impl NetworkedSystem {
    pub fn new(plant: PlantModel, channels: Vec<ChannelSpec>) -> Result<Self> {
        let n_v = plant.n_v();
        let mut covered = vec![false; n_v];
        for (i, c) in channels.iter().enumerate() {
            if c.range().end > n_v {
                return Err(Error::Config(format!("channel {i} exceeds signal dimension {n_v}")));
            }
            for k in c.range() {
                if covered[k] {
                    return Err(Error::Config(format!("signal component {k} in two channels")));
                }
                covered[k] = true;
            }
            if !(c.t_min > 0.0 && c.t_min <= c.t_max) {
                return Err(Error::Config(format!(
                    "channel {i}: need 0 < T_m <= T_M, got {} and {}",
                    c.t_min, c.t_max
                )));
            }
        }
        if let Some(k) = covered.iter().position(|c| !c) {
            return Err(Error::Config(format!("signal component {k} not assigned to a channel")));
        }
        Ok(Self { plant, channels })
    }

    /// Initial state with `v̂ = 0`, `θ = 0`, `ṽ = g_v(x₀)`, `η = 0`.
    pub fn initial_state(&self, x0: &[f64]) -> Result<HybridState> {
        if x0.len() != self.plant.n_x() {
            return Err(Error::Config(format!(
                "initial state has {} components, expected {}",
                x0.len(),
                self.plant.n_x()
            )));
        }
        let v = self.plant.outputs(x0);
        let channels = self
            .channels
            .iter()
            .map(|c| ChannelState::new(c.dim(), c.madns, v[c.range()].to_vec()))
            .collect();
        Ok(HybridState {
            x: x0.to_vec(),
            channels,
            t: 0.0,
            j: 0,
        })
    }

    /// `v_i = g_{v_i}(x)`.
    pub fn channel_signal(&self, x: &[f64], i: usize) -> Vec<f64> {
        self.plant.outputs(x)[self.channels[i].range()].to_vec()
    }

    /// Stacked held signal `v̂`.
    pub fn held_signal(&self, q: &HybridState) -> Vec<f64> {
        let mut v_hat = vec![0.0; self.plant.n_v()];
        for (spec, c) in self.channels.iter().zip(&q.channels) {
            v_hat[spec.range()].copy_from_slice(&c.v_hat);
        }
        v_hat
    }
}

/// The `η` dynamics of an event trigger, as seen by the hybrid model.
///
/// All methods receive the pre-jump state.
pub trait EtaRule {
    fn eta_flow(&self, sys: &NetworkedSystem, q: &HybridState, i: usize) -> f64;
    fn eta_after_sample(&self, sys: &NetworkedSystem, q: &HybridState, i: usize) -> Result<f64>;
    fn eta_after_transmit(&self, sys: &NetworkedSystem, q: &HybridState, i: usize) -> Result<f64>;
}

/// Keeps `η` constant. Useful when only the bookkeeping matters.
#[derive(Debug, Clone, Copy, Default)]
pub struct HoldEta;

impl EtaRule for HoldEta {
    fn eta_flow(&self, _: &NetworkedSystem, _: &HybridState, _: usize) -> f64 {
        0.0
    }
    fn eta_after_sample(&self, _: &NetworkedSystem, q: &HybridState, i: usize) -> Result<f64> {
        Ok(q.channels[i].eta)
    }
    fn eta_after_transmit(&self, _: &NetworkedSystem, q: &HybridState, i: usize) -> Result<f64> {
        Ok(q.channels[i].eta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDerivative {
    pub x: Vec<f64>,
    pub tau_hat: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Flow map: `ẋ = f(q, w)`, `τ̂̇ = 1`, `η̇ = f_η`.
pub fn flow_field(
    sys: &NetworkedSystem,
    q: &HybridState,
    w: &[f64],
    rule: &dyn EtaRule,
) -> Result<FlowDerivative> {
    let v_hat = sys.held_signal(q);
    let x = sys.plant.vector_field(&q.x, &v_hat, w);
    if let Some(k) = x.iter().position(|a| !a.is_finite()) {
        return Err(Error::Numerical {
            what: "plant vector field".into(),
            channel: None,
            component: Some(k),
        });
    }
    let mut eta = Vec::with_capacity(q.channels.len());
    for i in 0..q.channels.len() {
        let d = rule.eta_flow(sys, q, i);
        if !d.is_finite() {
            return Err(Error::Numerical {
                what: "eta flow".into(),
                channel: Some(i),
                component: None,
            });
        }
        eta.push(d);
    }
    Ok(FlowDerivative {
        x,
        tau_hat: vec![1.0; q.channels.len()],
        eta,
    })
}

/// Updating error `e_i = v̂_i − g_{v_i}(x)`.
pub fn updating_error(sys: &NetworkedSystem, q: &HybridState, i: usize) -> Vec<f64> {
    sub(&q.channels[i].v_hat, &sys.channel_signal(&q.x, i))
}

/// Transmission error `ē_i = e_i + Σ_{j ≤ l} θ_{i,j}`.
pub fn transmission_error(sys: &NetworkedSystem, q: &HybridState, i: usize) -> Vec<f64> {
    let mut e = updating_error(sys, q, i);
    let c = &q.channels[i];
    for block in &c.theta[..c.l] {
        add_assign(&mut e, block);
    }
    e
}

/// Transmission jump: schedule a packet and store its increment in `θ_{l+1}`.
pub fn jump_transmit(
    sys: &NetworkedSystem,
    q: &HybridState,
    i: usize,
    rule: &dyn EtaRule,
) -> Result<HybridState> {
    let c = &q.channels[i];
    if c.l > c.madns() {
        return Err(Error::ProtocolViolation {
            channel: i,
            reason: format!("transmission with l = {} packets already in flight", c.l),
        });
    }
    if c.m_hat != NextAction::Transmit {
        return Err(Error::ProtocolViolation {
            channel: i,
            reason: "transmission while the next action is an update".into(),
        });
    }
    let eta = rule.eta_after_transmit(sys, q, i)?;
    let e_bar = transmission_error(sys, q, i);
    let h = sys.channels[i].protocol.apply_h(c.k_bar, &e_bar);
    let increment = sub(&h, &e_bar);
    if !all_finite(&increment) {
        return Err(Error::Numerical {
            what: "transmission increment".into(),
            channel: Some(i),
            component: None,
        });
    }
    let mut next = q.clone();
    let v = sys.channel_signal(&q.x, i);
    let n = &mut next.channels[i];
    n.theta[c.l] = increment;
    n.v_tilde = v;
    n.tau_hat = 0.0;
    n.k_bar += 1;
    n.l += 1;
    n.eta = eta;
    if n.l == n.madns() + 1 {
        n.m_hat = NextAction::Update;
    }
    next.j += 1;
    Ok(next)
}

/// Sampling jump without transmission.
pub fn jump_sample_only(
    sys: &NetworkedSystem,
    q: &HybridState,
    i: usize,
    rule: &dyn EtaRule,
) -> Result<HybridState> {
    let eta = rule.eta_after_sample(sys, q, i)?;
    let mut next = q.clone();
    let n = &mut next.channels[i];
    n.v_tilde = sys.channel_signal(&q.x, i);
    n.tau_hat = 0.0;
    n.eta = eta;
    next.j += 1;
    Ok(next)
}

/// Arrival jump: the oldest in-flight packet updates `v̂`.
pub fn jump_arrival(sys: &NetworkedSystem, q: &HybridState, i: usize) -> Result<HybridState> {
    let _ = sys;
    let c = &q.channels[i];
    if c.l == 0 {
        return Err(Error::ProtocolViolation {
            channel: i,
            reason: "arrival with no packet in flight".into(),
        });
    }
    if c.m_hat != NextAction::Update {
        return Err(Error::ProtocolViolation {
            channel: i,
            reason: "arrival while the next action is a transmission".into(),
        });
    }
    let mut next = q.clone();
    let n = &mut next.channels[i];
    let first = n.theta.remove(0);
    add_assign(&mut n.v_hat, &first);
    n.theta.push(vec![0.0; first.len()]);
    n.k_tilde += 1;
    n.l -= 1;
    if n.l == 0 {
        n.m_hat = NextAction::Transmit;
    }
    next.j += 1;
    Ok(next)
}

/// `τ̂_i ∈ [0, T_M^i]` for every channel.
pub fn in_flow_set(sys: &NetworkedSystem, q: &HybridState) -> bool {
    sys.channels
        .iter()
        .zip(&q.channels)
        .all(|(s, c)| c.tau_hat >= 0.0 && c.tau_hat <= s.t_max)
}

/// `τ̂_i ∈ [T_m^i, T_M^i]`.
pub fn in_jump_set(sys: &NetworkedSystem, q: &HybridState, i: usize) -> bool {
    let s = &sys.channels[i];
    let tau = q.channels[i].tau_hat;
    tau >= s.t_min && tau <= s.t_max
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;
    use approx::assert_relative_eq;

    fn example1() -> NetworkedSystem {
        registry::example1_system(1, 0.002, 0.0054, registry::Example1Params::default()).unwrap()
    }

    #[test]
    fn flow_is_zero_at_equilibrium() {
        let sys = example1();
        let q = sys.initial_state(&[0.0, 0.0]).unwrap();
        let d = flow_field(&sys, &q, &[0.0], &HoldEta).unwrap();
        assert_eq!(d.x, vec![0.0, 0.0]);
        assert_eq!(d.eta, vec![0.0, 0.0]);
        assert_eq!(d.tau_hat, vec![1.0, 1.0]);
    }

    #[test]
    fn example1_vector_field_by_hand() {
        let sys = example1();
        let mut q = sys.initial_state(&[10.0, -10.0]).unwrap();
        q.channels[0].v_hat = vec![10.0];
        q.channels[1].v_hat = vec![-10.0];
        let d = flow_field(&sys, &q, &[0.0], &HoldEta).unwrap();
        assert_relative_eq!(d.x[0], 0.8 * 100.0 - 1000.0 - 10.0 - 20.0);
        assert_relative_eq!(d.x[1], 0.8 * 100.0 + 1000.0 + 10.0 + 20.0);
    }

    #[test]
    fn example2_position_derivative() {
        let sys = registry::example2_system(1, 0.0005, 0.0016, registry::Example2Params::default())
            .unwrap();
        let mut q = sys.initial_state(&[-1.3, 2.0]).unwrap();
        q.channels[0].v_hat = vec![-1.3, 2.0];
        let d = flow_field(&sys, &q, &[], &HoldEta).unwrap();
        assert_relative_eq!(d.x[0], 2.0);
    }

    #[test]
    fn sd_transmission_carries_exact_correction() {
        let sys = example1();
        let mut q = sys.initial_state(&[1.5, -0.5]).unwrap();
        q.channels[0].tau_hat = 0.003;
        let e_bar = transmission_error(&sys, &q, 0);
        assert_eq!(e_bar, updating_error(&sys, &q, 0));
        let p = jump_transmit(&sys, &q, 0, &HoldEta).unwrap();
        assert_eq!(p.channels[0].theta[0], vec![-e_bar[0]]);
        assert_eq!(transmission_error(&sys, &p, 0), vec![0.0]);
        assert_eq!(p.channels[0].v_tilde, vec![1.5]);
        assert_eq!(p.channels[0].tau_hat, 0.0);
        assert_eq!(p.channels[0].l, 1);
        assert_eq!(p.channels[1], q.channels[1]);
        assert_eq!(p.x, q.x);
    }

    #[test]
    fn tod_transmission_schedules_largest_node() {
        let sys = registry::example2_system(1, 0.0005, 0.0016, registry::Example2Params::default())
            .unwrap();
        let mut q = sys.initial_state(&[0.0, 0.0]).unwrap();
        q.channels[0].v_hat = vec![3.0, -1.0];
        let p = jump_transmit(&sys, &q, 0, &HoldEta).unwrap();
        assert_eq!(p.channels[0].theta[0], vec![-3.0, 0.0]);
    }

    #[test]
    fn sample_only_keeps_ledger() {
        let sys = example1();
        let q0 = sys.initial_state(&[1.0, 2.0]).unwrap();
        let q1 = jump_transmit(&sys, &q0, 0, &HoldEta).unwrap();
        let mut q2 = q1.clone();
        q2.x = vec![0.7, 2.0];
        let q3 = jump_sample_only(&sys, &q2, 0, &HoldEta).unwrap();
        assert_eq!(q3.channels[0].theta, q2.channels[0].theta);
        assert_eq!(q3.channels[0].v_hat, q2.channels[0].v_hat);
        assert_eq!(q3.channels[0].k_bar, q2.channels[0].k_bar);
        assert_eq!(q3.channels[0].v_tilde, vec![0.7]);
    }

    #[test]
    fn arrival_applies_first_block() {
        let sys = example1();
        let q0 = sys.initial_state(&[1.0, 2.0]).unwrap();
        let mut q1 = jump_transmit(&sys, &q0, 0, &HoldEta).unwrap();
        q1.set_next_action(0, NextAction::Update).unwrap();
        let q2 = jump_arrival(&sys, &q1, 0).unwrap();
        assert_eq!(q2.channels[0].v_hat, vec![1.0]);
        assert_eq!(q2.channels[0].l, 0);
        assert_eq!(q2.channels[0].m_hat, NextAction::Transmit);
        q2.check_invariants().unwrap();
        assert!(jump_arrival(&sys, &q2, 0).is_err());
    }

    #[test]
    fn transmission_beyond_capacity_is_rejected() {
        let sys = example1();
        let mut q = sys.initial_state(&[1.0, 2.0]).unwrap();
        q = jump_transmit(&sys, &q, 0, &HoldEta).unwrap();
        q.set_next_action(0, NextAction::Transmit).unwrap();
        q = jump_transmit(&sys, &q, 0, &HoldEta).unwrap();
        assert_eq!(q.channels[0].m_hat, NextAction::Update);
        assert!(q.set_next_action(0, NextAction::Transmit).is_err());
        q.channels[0].m_hat = NextAction::Transmit;
        assert!(matches!(
            jump_transmit(&sys, &q, 0, &HoldEta),
            Err(Error::ProtocolViolation { channel: 0, .. })
        ));
    }

    #[test]
    fn flow_and_jump_sets() {
        let sys = example1();
        let mut q = sys.initial_state(&[1.0, 2.0]).unwrap();
        assert!(in_flow_set(&sys, &q));
        assert!(!in_jump_set(&sys, &q, 0));
        q.channels[0].tau_hat = 0.0054;
        assert!(in_flow_set(&sys, &q));
        assert!(in_jump_set(&sys, &q, 0));
        q.channels[0].tau_hat = 0.003;
        assert!(in_jump_set(&sys, &q, 0));
        q.channels[0].tau_hat = 0.006;
        assert!(!in_flow_set(&sys, &q));
    }
}
