//! Hybrid state and per-channel bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Next-action tag `m̂`: the next channel event is a transmission (`+1`)
/// or an update (`−1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NextAction {
    Transmit,
    Update,
}

impl NextAction {
    pub fn sign(self) -> i8 {
        match self {
            NextAction::Transmit => 1,
            NextAction::Update => -1,
        }
    }

    pub fn from_sign(s: i64) -> Option<Self> {
        match s {
            1 => Some(NextAction::Transmit),
            -1 => Some(NextAction::Update),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    /// Received (held) signal `v̂`.
    pub v_hat: Vec<f64>,
    /// Memory blocks `θ_1 … θ_{D+1}`.
    pub theta: Vec<Vec<f64>>,
    /// Latest sampled signal `ṽ`.
    pub v_tilde: Vec<f64>,
    /// Time since last sample.
    pub tau_hat: f64,
    /// Transmission count `k̄`.
    pub k_bar: u64,
    /// Update count `k̃`.
    pub k_tilde: u64,
    /// Packets in flight.
    pub l: usize,
    pub m_hat: NextAction,
    pub eta: f64,
}

impl ChannelState {
    pub fn new(dim: usize, madns: usize, v_tilde: Vec<f64>) -> Self {
        Self {
            v_hat: vec![0.0; dim],
            theta: vec![vec![0.0; dim]; madns + 1],
            v_tilde,
            tau_hat: 0.0,
            k_bar: 0,
            k_tilde: 0,
            l: 0,
            m_hat: NextAction::Transmit,
            eta: 0.0,
        }
    }

    pub fn madns(&self) -> usize {
        self.theta.len() - 1
    }

    /// Checks the structural invariants of the channel bookkeeping.
    pub fn check_invariants(&self, channel: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::ProtocolViolation { channel, reason });
        let d = self.madns();
        if self.l > d + 1 {
            return fail(format!("l = {} exceeds D + 1 = {}", self.l, d + 1));
        }
        if self.k_bar < self.k_tilde || (self.k_bar - self.k_tilde) as usize != self.l {
            return fail(format!(
                "l = {} but k_bar - k_tilde = {} - {}",
                self.l, self.k_bar, self.k_tilde
            ));
        }
        if self.theta[self.l..].iter().flatten().any(|&c| c != 0.0) {
            return fail("theta has a non-zero block beyond l".into());
        }
        if self.eta < 0.0 || !self.eta.is_finite() {
            return fail(format!("eta = {} is not a finite non-negative value", self.eta));
        }
        if self.l == 0 && self.m_hat != NextAction::Transmit {
            return fail("m_hat must be +1 with nothing in flight".into());
        }
        if self.l == d + 1 && self.m_hat != NextAction::Update {
            return fail("m_hat must be -1 at full capacity".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub x: Vec<f64>,
    pub channels: Vec<ChannelState>,
    pub t: f64,
    pub j: u64,
}

impl HybridState {
    /// Sets `m̂` for channel `i`, enforcing the boundary rule.
    pub fn set_next_action(&mut self, i: usize, action: NextAction) -> Result<()> {
        let c = &mut self.channels[i];
        let forced = if c.l == 0 {
            Some(NextAction::Transmit)
        } else if c.l == c.madns() + 1 {
            Some(NextAction::Update)
        } else {
            None
        };
        if let Some(f) = forced {
            if f != action {
                return Err(Error::ProtocolViolation {
                    channel: i,
                    reason: format!("next action {action:?} contradicts l = {}", c.l),
                });
            }
        }
        c.m_hat = action;
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<()> {
        for (i, c) in self.channels.iter().enumerate() {
            c.check_invariants(i)?;
        }
        Ok(())
    }
}
