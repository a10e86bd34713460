//! Built-in scenarios.
//!
//! `example1` is a two-state polynomial plant with two single-node channels
//! and a static feedback `u_i = −2ŷ_i`. `example2` is a single-link robot
//! arm whose two outputs share one channel scheduled by try-once-discard.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{ChannelSpec, NetworkedSystem, PlantModel};
use crate::math::norm_sq;
use crate::protocols::Protocol;
use crate::storage::{young_augment, ChannelCertificate, DelayFreeCertificate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Example1Params {
    /// Quadratic coefficients `d_1`, `d_2`.
    pub d: [f64; 2],
    /// Lyapunov shape `(a, b, c)` of `V = a² Σ (b x²/2 + c x⁴/4)`.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Delay-free gain before augmentation.
    pub gamma0: f64,
    pub eps_bar: f64,
    /// Surplus gain `κ` of `κ‖v‖²` split by the Young inequality.
    pub kappa: f64,
}

impl Default for Example1Params {
    fn default() -> Self {
        Self {
            d: [0.8, 0.8],
            a: 1.7,
            b: 3.93,
            c: 2.9,
            gamma0: 8.36,
            eps_bar: 0.01,
            kappa: 2.0,
        }
    }
}

pub fn example1_plant(p: Example1Params) -> Result<PlantModel> {
    let d = p.d;
    PlantModel::with_static_controller(
        2,
        2,
        2,
        1,
        Arc::new(move |x: &[f64], u: &[f64], w: &[f64]| {
            vec![
                d[0] * x[0] * x[0] - x[0].powi(3) + x[1] + u[0] + w[0],
                d[1] * x[1] * x[1] - x[1].powi(3) + x[0] + u[1] + w[0],
            ]
        }),
        Arc::new(|x: &[f64]| x.to_vec()),
        Arc::new(|y: &[f64]| vec![-2.0 * y[0], -2.0 * y[1]]),
    )
}

/// Two single-node channels with the same delay budget and sampling bounds.
pub fn example1_system(madns: usize, t_min: f64, t_max: f64, p: Example1Params) -> Result<NetworkedSystem> {
    let channels = (0..2)
        .map(|i| ChannelSpec {
            offset: i,
            protocol: Protocol::sd(1),
            madns,
            t_min,
            t_max,
        })
        .collect();
    NetworkedSystem::new(example1_plant(p)?, channels)
}

pub fn example1_certificate(eps_check: f64, p: Example1Params) -> Result<DelayFreeCertificate> {
    let young = young_augment(p.kappa, eps_check)?;
    let gamma = (p.gamma0 * p.gamma0 + young.gamma_sq_increment).sqrt();
    let (a, b, c, d) = (p.a, p.b, p.c, p.d);
    let channels = (0..2)
        .map(|i| {
            let other = 1 - i;
            let gain = young.delta_hat_gain;
            let di = d[i];
            ChannelCertificate {
                protocol: Protocol::sd(1),
                h: Arc::new(move |x: &[f64], _e: &[f64], w: &[f64]| {
                    (di * x[i] * x[i] - x[i].powi(3) + x[other] - 2.0 * x[i]).abs()
                        + w.first().map_or(0.0, |w| w.abs())
                }),
                m_e: 2.0,
                delta: Arc::new(|v: &[f64]| 0.5 * v[0] * v[0]),
                delta_bar: Arc::new(move |v: &[f64]| gain * v[0] * v[0]),
                j: Arc::new(move |x: &[f64], e: &[f64], w: &[f64]| {
                    let wi = w.first().copied().unwrap_or(0.0);
                    -2.0 * x[i] * x[i]
                        + (x[i].powi(3) + x[i] * x[other]).abs()
                        + (2.0 * di * x[i] * x[i]).abs()
                        + e[i] * e[i]
                        + wi * wi
                }),
                gamma,
                epsilon: 0.0,
                eps_bar: p.eps_bar,
            }
        })
        .collect();
    Ok(DelayFreeCertificate {
        v: Arc::new(move |x: &[f64]| {
            a * a * x.iter().map(|xi| b * xi * xi / 2.0 + c * xi.powi(4) / 4.0).sum::<f64>()
        }),
        channels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Example2Params {
    /// Gravity coefficient of the arm.
    pub gravity: f64,
    /// Input gain.
    pub input_gain: f64,
    /// Coefficient of `sin ŷ_1` in `u = ½(k sin ŷ_1 − ŷ_1 − ŷ_2)`.
    pub sin_gain: f64,
}

impl Default for Example2Params {
    fn default() -> Self {
        Self {
            gravity: 4.905,
            input_gain: 2.0,
            sin_gain: 1.0,
        }
    }
}

impl Example2Params {
    /// Controller that cancels gravity exactly, for which the shipped
    /// quadratic `V` is a Lyapunov function of the linearisation.
    pub fn gravity_compensated() -> Self {
        let p = Self::default();
        Self {
            sin_gain: p.gravity,
            ..p
        }
    }
}

pub fn example2_plant(p: Example2Params) -> Result<PlantModel> {
    PlantModel::with_static_controller(
        2,
        2,
        1,
        0,
        Arc::new(move |x: &[f64], u: &[f64], _w: &[f64]| {
            vec![x[1], -p.gravity * x[0].sin() + p.input_gain * u[0]]
        }),
        Arc::new(|x: &[f64]| x.to_vec()),
        Arc::new(move |y: &[f64]| vec![0.5 * (p.sin_gain * y[0].sin() - y[0] - y[1])]),
    )
}

/// One try-once-discard channel carrying both outputs as separate nodes.
pub fn example2_system(madns: usize, t_min: f64, t_max: f64, p: Example2Params) -> Result<NetworkedSystem> {
    let channel = ChannelSpec {
        offset: 0,
        protocol: Protocol::tod(&[1, 1])?,
        madns,
        t_min,
        t_max,
    };
    NetworkedSystem::new(example2_plant(p)?, vec![channel])
}

pub fn example2_certificate() -> Result<DelayFreeCertificate> {
    let channel = ChannelCertificate {
        protocol: Protocol::tod(&[1, 1])?,
        h: Arc::new(|x: &[f64], _e: &[f64], _w: &[f64]| x[1].abs() + (x[0] + x[1]).abs()),
        m_e: 8.351,
        delta: Arc::new(norm_sq),
        delta_bar: Arc::new(|v: &[f64]| 0.0634 * norm_sq(v)),
        j: Arc::new(|_x: &[f64], e: &[f64], _w: &[f64]| 8.601 * norm_sq(e)),
        gamma: 46.1014,
        epsilon: 0.05,
        eps_bar: 0.01,
    };
    Ok(DelayFreeCertificate {
        v: Arc::new(|x: &[f64]| 12.2160 * x[0] * x[0] + 4.2200 * x[0] * x[1] + 20.2120 * x[1] * x[1]),
        channels: vec![channel],
    })
}

/// Names accepted by [`plant_by_name`] and [`certificate_by_name`].
pub const SCENARIOS: [&str; 2] = ["example1", "example2"];

pub fn check_name(name: &str) -> Result<()> {
    if SCENARIOS.contains(&name) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "unknown scenario '{name}', expected one of {SCENARIOS:?}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn example1_gamma() {
        let c = example1_certificate(0.5, Example1Params::default()).unwrap();
        assert_relative_eq!(c.channels[0].gamma, (8.36f64.powi(2) + 2.0).sqrt());
        assert_relative_eq!((c.channels[1].delta_bar)(&[2.0]), 4.0);
        c.validate(2).unwrap();
    }

    #[test]
    fn example2_certificate_is_valid() {
        let c = example2_certificate().unwrap();
        c.validate(2).unwrap();
        assert_relative_eq!((c.v)(&[1.0, 1.0]), 12.216 + 4.22 + 20.212);
    }

    /// The compensated controller gives `ẋ = A x` with `A = [[0, 1], [−1, −1]]`,
    /// for which `AᵀP + PA ≺ 0` with the shipped `V = xᵀPx`.
    #[test]
    fn compensated_arm_linearisation_is_certified() {
        let p = [[12.2160, 2.11], [2.11, 20.2120]];
        let lyap = |a: [[f64; 2]; 2]| {
            let mut m = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        m[i][j] += a[k][i] * p[k][j] + p[i][k] * a[k][j];
                    }
                }
            }
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            (tr, det)
        };
        let (tr, det) = lyap([[0.0, 1.0], [-1.0, -1.0]]);
        assert!(tr < 0.0 && det > 0.0);
        // The literal controller leaves −4.905 + 1 − 1 in the linearisation.
        let (tr, det) = lyap([[0.0, 1.0], [-4.905, -1.0]]);
        assert!(!(tr < 0.0 && det > 0.0));
    }
}
