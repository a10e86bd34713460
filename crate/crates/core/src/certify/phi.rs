//! The Riccati-type ODE `φ̇ = −2Lφ − γ(φ² + 1)` on a uniform grid.

use serde::Serialize;

use crate::error::{Error, Result};

/// `φ` sampled on a uniform grid over `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiTrajectory {
    pub l_gain: f64,
    pub gamma: f64,
    pub phi0: f64,
    pub step: f64,
    pub values: Vec<f64>,
    /// First time `φ` reaches zero, if it does on the horizon.
    pub crossed_zero: Option<f64>,
    /// RK4 substeps used per grid interval after refinement.
    pub substeps: usize,
}

impl PhiTrajectory {
    pub fn horizon(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    /// Linear interpolation between grid nodes; `None` outside `[0, T]`.
    pub fn at(&self, t: f64) -> Option<f64> {
        let horizon = self.horizon();
        let slack = 1e-12 * horizon.max(1e-300) * 1e3;
        if !(t >= -slack && t <= horizon + slack) {
            return None;
        }
        let t = t.clamp(0.0, horizon);
        let pos = t / self.step;
        let k = (pos.floor() as usize).min(self.values.len().saturating_sub(2));
        if self.values.len() == 1 {
            return Some(self.values[0]);
        }
        let frac = pos - k as f64;
        Some(self.values[k] + frac * (self.values[k + 1] - self.values[k]))
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("non-empty trajectory")
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn rhs(l_gain: f64, gamma: f64, phi: f64) -> f64 {
    -2.0 * l_gain * phi - gamma * (phi * phi + 1.0)
}

fn rk4(l_gain: f64, gamma: f64, phi: f64, h: f64) -> f64 {
    let k1 = rhs(l_gain, gamma, phi);
    let k2 = rhs(l_gain, gamma, phi + 0.5 * h * k1);
    let k3 = rhs(l_gain, gamma, phi + 0.5 * h * k2);
    let k4 = rhs(l_gain, gamma, phi + h * k3);
    phi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

fn integrate(l_gain: f64, gamma: f64, phi0: f64, step: f64, n: usize, sub: usize) -> Vec<f64> {
    let h = step / sub as f64;
    let mut values = Vec::with_capacity(n + 1);
    let mut phi = phi0;
    values.push(phi);
    for _ in 0..n {
        for _ in 0..sub {
            phi = rk4(l_gain, gamma, phi, h);
        }
        values.push(phi);
    }
    values
}

/// Solves `φ` on `[0, horizon]` with nodes spaced at most `step` apart.
///
/// Each grid interval is integrated with RK4 substeps, doubled until two
/// successive refinements agree to `1e-9` at the horizon.
pub fn solve_phi(l_gain: f64, gamma: f64, phi0: f64, horizon: f64, step: f64) -> Result<PhiTrajectory> {
    if !(l_gain >= 0.0 && gamma > 0.0 && phi0 > 0.0) {
        return Err(Error::Config(format!(
            "phi ODE needs L >= 0, gamma > 0, phi0 > 0 (got {l_gain}, {gamma}, {phi0})"
        )));
    }
    if !(step > 0.0 && horizon >= 0.0) {
        return Err(Error::Config(format!("bad phi grid: horizon {horizon}, step {step}")));
    }
    let n = ((horizon / step) - 1e-9).ceil().max(1.0) as usize;
    let step = if horizon > 0.0 { horizon / n as f64 } else { step };
    let n = if horizon > 0.0 { n } else { 0 };
    let mut sub = 1;
    let mut values = integrate(l_gain, gamma, phi0, step, n, sub);
    loop {
        let finer = integrate(l_gain, gamma, phi0, step, n, 2 * sub);
        let (a, b) = (*values.last().unwrap(), *finer.last().unwrap());
        values = finer;
        sub *= 2;
        if (a - b).abs() <= 1e-9 * b.abs().max(1.0) || sub >= 1 << 16 || !b.is_finite() {
            break;
        }
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        values.truncate(k);
    }
    let crossed_zero = values.windows(2).enumerate().find_map(|(k, w)| {
        (w[1] <= 0.0).then(|| step * (k as f64 + w[0] / (w[0] - w[1])))
    });
    Ok(PhiTrajectory {
        l_gain,
        gamma,
        phi0,
        step,
        values,
        crossed_zero,
        substeps: sub,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn riccati_closed_form() {
        let p = solve_phi(0.0, 1.0, 1.0, 0.5, 1e-3).unwrap();
        let oracle = (std::f64::consts::FRAC_PI_4 - 0.5).tan();
        assert_abs_diff_eq!(p.last(), oracle, epsilon = 1e-10);
        assert_abs_diff_eq!(p.last(), 0.293408, epsilon = 1e-6);
    }

    #[test]
    fn linear_limit() {
        let p = solve_phi(3.0, 1e-12, 2.0, 0.2, 1e-3).unwrap();
        assert_abs_diff_eq!(p.last(), 2.0 * (-1.2f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn strictly_decreasing() {
        let p = solve_phi(2.0, 20.0, 10.0, 0.01, 1e-5).unwrap();
        assert!(p.values.windows(2).all(|w| w[1] < w[0]));
        assert!(p.crossed_zero.is_none());
    }

    #[test]
    fn zero_crossing_reported() {
        // φ = tan(π/4 − t) reaches zero at π/4.
        let p = solve_phi(0.0, 1.0, 1.0, 1.0, 1e-3).unwrap();
        let t0 = p.crossed_zero.unwrap();
        assert_abs_diff_eq!(t0, std::f64::consts::FRAC_PI_4, epsilon = 1e-6);
    }

    #[test]
    fn interpolation_covers_grid_only() {
        let p = solve_phi(1.0, 1.0, 1.0, 0.1, 0.01).unwrap();
        assert_eq!(p.at(0.0), Some(1.0));
        assert_eq!(p.at(0.1), Some(p.last()));
        assert!(p.at(0.1 + 1e-6).is_none());
        let mid = p.at(0.005).unwrap();
        assert_abs_diff_eq!(mid, 0.5 * (p.values[0] + p.values[1]), epsilon = 1e-15);
    }
}
