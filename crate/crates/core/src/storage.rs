//! Delay-free certificates, the delay-adjusted storage function `W̃` and the
//! per-`l` lifted constants.
//!
//! A certificate is scenario data: closed forms for `V`, `δ`, `H`, `J` and
//! the scalar constants that go with them. This module only combines them.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::add_assign;
use crate::protocols::Protocol;

/// `x ↦ scalar`, used for `V` and for `δ`, `δ̄` on channel signals.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `(x, e, w) ↦ scalar`, used for `H_i` and `J_i`. `e` is the stacked error.
pub type GrowthFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

/// Per-channel part of a delay-free certificate.
#[derive(Clone)]
pub struct ChannelCertificate {
    pub protocol: Protocol,
    /// Growth bound `H_i(x, e, w)`.
    pub h: GrowthFn,
    pub m_e: f64,
    /// `δ_i(v_i)`.
    pub delta: ScalarFn,
    /// `δ̄_i(v̂_i)`.
    pub delta_bar: ScalarFn,
    /// `J_i(x, e, w)`.
    pub j: GrowthFn,
    pub gamma: f64,
    pub epsilon: f64,
    pub eps_bar: f64,
}

impl fmt::Debug for ChannelCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChannelCertificate")
            .field("protocol", &self.protocol)
            .field("m_e", &self.m_e)
            .field("gamma", &self.gamma)
            .field("epsilon", &self.epsilon)
            .field("eps_bar", &self.eps_bar)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct DelayFreeCertificate {
    pub v: ScalarFn,
    pub channels: Vec<ChannelCertificate>,
}

impl fmt::Debug for DelayFreeCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DelayFreeCertificate")
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl DelayFreeCertificate {
    /// Validates the numeric invariants of the certificate.
    pub fn validate(&self, n_x: usize) -> Result<()> {
        if (self.v)(&vec![0.0; n_x]).abs() > 1e-12 {
            return Err(Error::Config("V(0) != 0".into()));
        }
        for (i, c) in self.channels.iter().enumerate() {
            let zero = vec![0.0; c.protocol.dim()];
            if (c.delta)(&zero).abs() > 1e-12 {
                return Err(Error::Config(format!("channel {i}: delta(0) != 0")));
            }
            if !(c.gamma > 0.0) || !(c.eps_bar > 0.0 && c.eps_bar < c.gamma * c.gamma) {
                return Err(Error::Config(format!(
                    "channel {i}: need gamma > 0 and 0 < eps_bar < gamma^2"
                )));
            }
            if c.epsilon < 0.0 || c.m_e < 0.0 {
                return Err(Error::Config(format!("channel {i}: negative epsilon or M_e")));
            }
        }
        Ok(())
    }
}

/// Delay-adjusted storage function
/// `W̃(k̄, l, θ, e) = max_{m=0..l} (λ̃/λ_W)^{l−m} · W(k̄, e + Σ_{j≤m} θ_j)`.
#[derive(Debug, Clone)]
pub struct WTilde {
    pub protocol: Protocol,
    pub lambda_tilde: f64,
}

impl WTilde {
    pub fn eval(&self, k_bar: u64, l: usize, theta: &[Vec<f64>], e: &[f64]) -> f64 {
        let ratio = self.lambda_tilde / self.protocol.lambda_w;
        let mut acc = e.to_vec();
        let mut terms = Vec::with_capacity(l + 1);
        terms.push(self.protocol.w(k_bar, &acc));
        for block in &theta[..l] {
            add_assign(&mut acc, block);
            terms.push(self.protocol.w(k_bar, &acc));
        }
        // terms[m] carries the weight ratio^(l - m)
        let mut best: f64 = 0.0;
        let mut weight = 1.0;
        for t in terms.iter().rev() {
            best = best.max(weight * t);
            weight *= ratio;
        }
        best
    }
}

/// Builds `W̃` for a protocol, requiring `λ < λ̃ < 1`.
pub fn build_w_tilde(protocol: &Protocol, lambda_tilde: f64) -> Result<WTilde> {
    if !(lambda_tilde > protocol.lambda && lambda_tilde < 1.0) {
        return Err(Error::Config(format!(
            "lambda_tilde {lambda_tilde} must lie in (lambda, 1) = ({}, 1)",
            protocol.lambda
        )));
    }
    Ok(WTilde {
        protocol: protocol.clone(),
        lambda_tilde,
    })
}

/// Per-channel constants for `l = 0 … D + 1`.
#[derive(Debug, Clone, Serialize)]
pub struct LiftedChannel {
    pub lambda_tilde: f64,
    pub madns: usize,
    /// `L_l = λ_W^l M_e / (λ̃^l β̲_W)`.
    pub l_gain: Vec<f64>,
    /// `γ_l = λ_W^l γ / λ̃^l`.
    pub gamma: Vec<f64>,
    /// `σ_l(r) = sigma_gain[l] · r²`.
    pub sigma_gain: Vec<f64>,
    pub epsilon: f64,
    #[serde(skip)]
    pub w_tilde: Option<WTilde>,
}

impl LiftedChannel {
    pub fn w_tilde(&self) -> &WTilde {
        self.w_tilde.as_ref().expect("lifted channel carries its storage function")
    }
}

/// Lifts the delay-free constants of one channel to every in-flight count.
pub fn lift_constants(
    cert: &ChannelCertificate,
    lambda_tilde: f64,
    madns: usize,
) -> Result<LiftedChannel> {
    let w_tilde = build_w_tilde(&cert.protocol, lambda_tilde)?;
    let growth = cert.protocol.lambda_w / lambda_tilde;
    let mut l_gain = Vec::with_capacity(madns + 2);
    let mut gamma = Vec::with_capacity(madns + 2);
    let mut sigma_gain = Vec::with_capacity(madns + 2);
    for l in 0..=madns + 1 {
        let g = growth.powi(l as i32);
        l_gain.push(g * cert.m_e / cert.protocol.beta_lo);
        gamma.push(g * cert.gamma);
        sigma_gain.push(g * g * cert.eps_bar);
    }
    Ok(LiftedChannel {
        lambda_tilde,
        madns,
        l_gain,
        gamma,
        sigma_gain,
        epsilon: cert.epsilon,
        w_tilde: Some(w_tilde),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YoungAugmentation {
    /// Gain of `δ̂(v̂) = gain · ‖v̂‖²`.
    pub delta_hat_gain: f64,
    /// Amount added to `γ²`.
    pub gamma_sq_increment: f64,
}

/// Splits a surplus `κ‖v‖²` via `‖v‖² ≥ (1 − ε̌)‖v̂‖² − (1/ε̌ − 1)‖e‖²`.
pub fn young_augment(kappa: f64, eps_check: f64) -> Result<YoungAugmentation> {
    if !(eps_check > 0.0 && eps_check <= 1.0) {
        return Err(Error::Config(format!("eps_check {eps_check} not in (0, 1]")));
    }
    if kappa < 0.0 {
        return Err(Error::Config(format!("negative surplus gain {kappa}")));
    }
    Ok(YoungAugmentation {
        delta_hat_gain: kappa * (1.0 - eps_check),
        gamma_sq_increment: kappa * (1.0 - eps_check) / eps_check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sd_w_tilde() -> WTilde {
        build_w_tilde(&Protocol::sd(1), 0.5).unwrap()
    }

    #[test]
    fn single_term_without_packets() {
        let w = sd_w_tilde();
        assert_eq!(w.eval(3, 0, &[vec![0.0], vec![0.0]], &[-1.7]), 1.7);
    }

    #[test]
    fn one_packet_in_flight() {
        let w = sd_w_tilde();
        assert_relative_eq!(w.eval(0, 1, &[vec![-3.0], vec![0.0]], &[2.0]), 1.0);
    }

    #[test]
    fn lambda_tilde_range() {
        assert!(build_w_tilde(&Protocol::sd(1), 0.0).is_err());
        assert!(build_w_tilde(&Protocol::sd(1), 1.0).is_err());
        let tod = Protocol::tod(&[1, 1]).unwrap();
        assert!(build_w_tilde(&tod, 0.7).is_err());
        assert!(build_w_tilde(&tod, 0.8).is_ok());
    }

    #[test]
    fn example1_lifted_constants() {
        let cert = registry::example1_certificate(0.5, registry::Example1Params::default()).unwrap();
        let lifted = lift_constants(&cert.channels[0], 0.5, 1).unwrap();
        assert_eq!(lifted.l_gain, vec![2.0, 4.0, 8.0]);
        let g = cert.channels[0].gamma;
        assert_relative_eq!(lifted.gamma[1], 2.0 * g);
        assert_relative_eq!(lifted.gamma[2], 4.0 * g);
        assert_relative_eq!(lifted.sigma_gain[1], 4.0 * 0.01);
        assert_eq!(lifted.gamma[0], g);
        assert_eq!(lifted.l_gain[0], cert.channels[0].m_e);
    }

    #[test]
    fn young_examples() {
        let none = young_augment(2.0, 1.0).unwrap();
        assert_eq!(none.delta_hat_gain, 0.0);
        assert_eq!(none.gamma_sq_increment, 0.0);
        let half = young_augment(2.0, 0.5).unwrap();
        assert_relative_eq!(half.delta_hat_gain, 1.0);
        assert_relative_eq!(half.gamma_sq_increment, 2.0);
        let small = young_augment(2.0, 0.01).unwrap();
        assert_relative_eq!(small.gamma_sq_increment, 198.0, max_relative = 1e-12);
        assert!(young_augment(2.0, 0.0).is_err());
    }

    /// The small-delay construction `max{(λ̃/λ_W) W(e), W(e + θ_1)}` coincides
    /// with `W̃` for one packet in flight and with `W` when the ledger is empty.
    #[test]
    fn small_delay_construction_agrees() {
        let tod = Protocol::tod(&[1, 1]).unwrap();
        let w = build_w_tilde(&tod, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let e = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let th = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let small = (0.8 * tod.w(0, &e)).max(tod.w(0, &[e[0] + th[0], e[1] + th[1]]));
            assert_relative_eq!(w.eval(0, 1, &[th, vec![0.0; 2]], &e), small);
            assert_relative_eq!(w.eval(0, 0, &[vec![0.0; 2], vec![0.0; 2]], &e), tod.w(0, &e));
        }
    }

    /// Finite-difference check of the `W̃` flow bound on the polynomial plant.
    #[test]
    fn example1_flow_bound_spot_check() {
        let params = registry::Example1Params::default();
        let cert = registry::example1_certificate(0.5, params).unwrap();
        let sys = registry::example1_system(1, 0.002, 0.0054, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5000 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let e = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let w = [rng.gen_range(-2.0..2.0)];
            let v_hat = [x[0] + e[0], x[1] + e[1]];
            let dx = sys.plant.vector_field(&x, &v_hat, &w);
            for i in 0..2 {
                let lifted = lift_constants(&cert.channels[i], 0.5, 1).unwrap();
                let l = rng.gen_range(0..=2usize);
                let theta: Vec<Vec<f64>> = (0..2)
                    .map(|j| if j < l { vec![rng.gen_range(-1.0..1.0)] } else { vec![0.0] })
                    .collect();
                let wt = lifted.w_tilde();
                let f = |ei: f64| wt.eval(0, l, &theta, &[ei]);
                let base = f(e[i]);
                let h = 1e-7;
                let dir = (f(e[i] - h * dx[i]) - base) / h;
                let bound = lifted.l_gain[l] * base + (cert.channels[i].h)(&x, &e, &w);
                assert!(dir <= bound * (1.0 + 1e-6) + 1e-6, "{dir} > {bound}");
            }
        }
    }

    fn random_ledger(rng: &mut ChaCha8Rng, dim: usize, madns: usize) -> (usize, Vec<Vec<f64>>, Vec<f64>) {
        let l = rng.gen_range(0..=madns);
        let theta = (0..=madns)
            .map(|j| {
                (0..dim)
                    .map(|_| if j < l { rng.gen_range(-3.0..3.0) } else { 0.0 })
                    .collect()
            })
            .collect();
        let e = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        (l, theta, e)
    }

    proptest! {
        #[test]
        fn sandwich_bounds(seed in any::<u64>(), tod in any::<bool>()) {
            let p = if tod { Protocol::tod(&[1, 1]).unwrap() } else { Protocol::sd(2) };
            let lt = if tod { 0.8 } else { 0.5 };
            let w = build_w_tilde(&p, lt).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (l, theta, e) = random_ledger(&mut rng, 2, 2);
            let val = w.eval(0, l, &theta, &e);
            let mut stacked = e.clone();
            for b in &theta[..l] {
                stacked.extend(b);
            }
            let n = crate::math::norm(&stacked);
            // upper: each partial sum is bounded by √(l+1)‖(e, θ)‖
            prop_assert!(val <= ((l + 1) as f64).sqrt() * n * (1.0 + 1e-12));
            // lower: ‖(e, θ)‖ ≤ (2l + 1)·max_m ‖e + Σθ‖ ≤ (2l + 1) λ̃^{-l} W̃
            prop_assert!(lt.powi(l as i32) * n <= (2 * l + 1) as f64 * val * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn transmit_contracts_and_arrival_does_not_increase(seed in any::<u64>(), kind in 0u8..3) {
            let p = match kind {
                0 => Protocol::sd(2),
                1 => Protocol::tod(&[1, 1]).unwrap(),
                _ => Protocol::round_robin(&[1, 1]).unwrap(),
            };
            let lt = 0.8;
            let w = build_w_tilde(&p, lt).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (l, theta, e) = random_ledger(&mut rng, 2, 2);
            let k = rng.gen_range(0..10u64);
            let before = w.eval(k, l, &theta, &e);
            let mut e_bar = e.clone();
            for b in &theta[..l] { add_assign(&mut e_bar, b); }
            let h = p.apply_h(k, &e_bar);
            let mut t2 = theta.clone();
            t2[l] = crate::math::sub(&h, &e_bar);
            let after = w.eval(k + 1, l + 1, &t2, &e);
            prop_assert!(after <= lt * before + 1e-12);
            if l >= 1 {
                let mut t2 = theta[1..].to_vec();
                t2.push(vec![0.0; 2]);
                let e2 = crate::math::add(&e, &theta[0]);
                let after = w.eval(k, l - 1, &t2, &e2);
                prop_assert!(after <= before + 1e-12);
            }
        }
    }
}
