//! MASP certification: feasibility of the `φ` conditions, bisection on `T_M`
//! and the runtime constants used by the triggers.

mod phi;

pub use phi::{solve_phi, PhiTrajectory};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::storage::LiftedChannel;

/// Data of one channel's feasibility problem, indexed by `l = 0 … D + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaspProblem {
    pub madns: usize,
    pub lambda_tilde: f64,
    pub l_gain: Vec<f64>,
    pub gamma: Vec<f64>,
    pub phi0: Vec<f64>,
}

impl MaspProblem {
    pub fn from_lifted(lifted: &LiftedChannel, phi0: &[f64]) -> Result<Self> {
        let n = lifted.madns + 2;
        let phi0 = match phi0.len() {
            1 => vec![phi0[0]; n],
            len if len == n => phi0.to_vec(),
            len => {
                return Err(Error::Config(format!(
                    "expected 1 or {n} initial values for phi, got {len}"
                )))
            }
        };
        if phi0.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config("initial values of phi must be positive".into()));
        }
        Ok(Self {
            madns: lifted.madns,
            lambda_tilde: lifted.lambda_tilde,
            l_gain: lifted.l_gain.clone(),
            gamma: lifted.gamma.clone(),
            phi0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaspCheck {
    pub feasible: bool,
    /// Minimum slack over every checked inequality.
    pub margin: f64,
    /// Minimum slack of the transmission conditions `γ_l φ_l(T_M) ≥ λ̃² γ_{l+1} φ_{l+1}(0)`.
    pub margin_transmit: f64,
    /// Minimum slack of the ordering conditions `γ_{l−1} φ_{l−1}(τ) ≤ γ_l φ_l(τ)`.
    pub margin_order: f64,
    /// Number of transmission conditions checked (one per `l = 0 … D`).
    pub transmit_conditions: usize,
    /// Number of ordering families checked (one per `l = 1 … D + 1`).
    pub order_conditions: usize,
    pub t_max: f64,
    pub grid_step: f64,
    #[serde(skip)]
    pub trajectories: Vec<PhiTrajectory>,
}

/// Checks both feasibility conditions on `[0, T_M]`.
pub fn check_masp(problem: &MaspProblem, t_max: f64, grid_step: f64) -> Result<MaspCheck> {
    let n = problem.madns + 2;
    if problem.l_gain.len() != n || problem.gamma.len() != n || problem.phi0.len() != n {
        return Err(Error::Config(format!("feasibility problem needs {n} entries per list")));
    }
    if !(t_max > 0.0) {
        return Err(Error::Config(format!("T_M must be positive, got {t_max}")));
    }
    let trajectories = (0..n)
        .map(|l| solve_phi(problem.l_gain[l], problem.gamma[l], problem.phi0[l], t_max, grid_step))
        .collect::<Result<Vec<_>>>()?;
    let step = trajectories[0].step;
    let nodes = trajectories.iter().map(|t| t.values.len()).min().unwrap_or(0);
    let full = (t_max / step).round() as usize + 1;

    let mut margin_positive = f64::INFINITY;
    for (l, tr) in trajectories.iter().enumerate() {
        if tr.values.len() < full {
            margin_positive = f64::MIN;
        } else {
            margin_positive = margin_positive.min(problem.gamma[l] * tr.min());
        }
    }

    let lt2 = problem.lambda_tilde * problem.lambda_tilde;
    let mut margin_transmit = f64::INFINITY;
    for l in 0..=problem.madns {
        let lhs = problem.gamma[l] * trajectories[l].values.get(full - 1).copied().unwrap_or(f64::MIN);
        let rhs = lt2 * problem.gamma[l + 1] * problem.phi0[l + 1];
        margin_transmit = margin_transmit.min(lhs - rhs);
    }
    let mut margin_order = f64::INFINITY;
    for l in 1..=problem.madns + 1 {
        for k in 0..nodes {
            let hi = problem.gamma[l] * trajectories[l].values[k];
            let lo = problem.gamma[l - 1] * trajectories[l - 1].values[k];
            margin_order = margin_order.min(hi - lo);
        }
    }
    if nodes < full {
        margin_order = margin_order.min(f64::MIN);
    }
    let mut margin = margin_transmit.min(margin_order);
    if margin_positive <= 0.0 {
        margin = margin.min(margin_positive);
    }
    if !margin.is_finite() {
        margin = f64::MIN;
    }
    Ok(MaspCheck {
        feasible: margin >= 0.0,
        margin,
        margin_transmit,
        margin_order,
        transmit_conditions: problem.madns + 1,
        order_conditions: problem.madns + 1,
        t_max,
        grid_step: step,
        trajectories,
    })
}

/// Largest feasible `T_M` in `[t_lo, t_hi]`, located to within `tol` by bisection.
pub fn max_tm(problem: &MaspProblem, t_lo: f64, t_hi: f64, tol: f64, grid_step: f64) -> Result<f64> {
    if !(t_lo > 0.0 && t_lo < t_hi && tol > 0.0) {
        return Err(Error::Config(format!(
            "bisection needs 0 < T_lo < T_hi and tol > 0 (got {t_lo}, {t_hi}, {tol})"
        )));
    }
    if !check_masp(problem, t_lo, grid_step)?.feasible {
        return Err(Error::Certification(
            "no admissible MASP above lower bound".into(),
        ));
    }
    if check_masp(problem, t_hi, grid_step)?.feasible {
        return Ok(t_hi);
    }
    let (mut lo, mut hi) = (t_lo, t_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if check_masp(problem, mid, grid_step)?.feasible {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Constants that the event trigger and the monitor need at run time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuntimeConstants {
    pub rho_bar: f64,
    pub rho_hat: f64,
    pub rho_tilde: f64,
    pub varpi_min: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub pi: f64,
    pub t_max: f64,
}

impl RuntimeConstants {
    /// `ϖ(τ) = 1 − (1 − π) τ / T_M`.
    pub fn varpi(&self, tau: f64) -> f64 {
        1.0 - (1.0 - self.pi) * tau / self.t_max
    }
}

/// Selects the largest admissible `ρ̄`, `ρ̂`, `ρ̃`.
pub fn compute_runtime_constants(
    check: &MaspCheck,
    gammas: &[f64],
    pi: f64,
    eps_l: &[f64],
) -> Result<RuntimeConstants> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::Config(format!("pi = {pi} not in (0, 1)")));
    }
    if eps_l.is_empty() || gammas.is_empty() {
        return Err(Error::Config("empty constant lists".into()));
    }
    let phi_min = check.trajectories.iter().map(PhiTrajectory::min).fold(f64::INFINITY, f64::min);
    let phi_max = check
        .trajectories
        .iter()
        .map(|t| t.values[0])
        .fold(f64::NEG_INFINITY, f64::max);
    if !(phi_min > 0.0) {
        return Err(Error::Certification(format!("phi reaches {phi_min} on [0, T_M]")));
    }
    let gamma_min = gammas.iter().copied().fold(f64::INFINITY, f64::min);
    let gamma_max = gammas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rho_bar = eps_l.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    let rho_hat = 0.5 * (phi_min / gamma_max).min(1.0);
    let rho_tilde = (rho_bar * (1.0 - pi) / check.t_max).min(pi / 2.0);
    Ok(RuntimeConstants {
        rho_bar,
        rho_hat,
        rho_tilde,
        varpi_min: pi,
        phi_min,
        phi_max,
        gamma_min,
        gamma_max,
        pi,
        t_max: check.t_max,
    })
}

/// Dense lookup of `γ_l φ_l(τ)` for `τ ∈ [0, T_M]`.
#[derive(Debug, Clone)]
pub struct GammaPhiTable {
    pub t_max: f64,
    pub gamma: Vec<f64>,
    pub trajectories: Vec<PhiTrajectory>,
}

impl GammaPhiTable {
    pub fn new(gamma: Vec<f64>, trajectories: Vec<PhiTrajectory>, t_max: f64) -> Self {
        Self {
            t_max,
            gamma,
            trajectories,
        }
    }

    pub fn levels(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma_phi(&self, l: usize, tau: f64) -> Result<f64> {
        let tr = self.trajectories.get(l).ok_or_else(|| {
            Error::Certification(format!("no phi trajectory for l = {l}"))
        })?;
        let phi = tr.at(tau).ok_or_else(|| {
            Error::Certification(format!(
                "tau = {tau} outside the certified interval [0, {}]",
                self.t_max
            ))
        })?;
        Ok(self.gamma[l] * phi)
    }
}

/// Numerical options of the MASP search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchOptions {
    pub t_lo: f64,
    pub t_hi: f64,
    pub tol: f64,
    pub grid_step: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            t_lo: 1e-6,
            t_hi: 0.1,
            tol: 1e-5,
            grid_step: 1e-6,
        }
    }
}

/// Certified data of one channel.
#[derive(Debug, Clone, Serialize)]
pub struct ChannelCertification {
    pub t_max: f64,
    /// Largest feasible `T_M` found by bisection, if a search was run.
    pub max_t_max: Option<f64>,
    pub check: MaspCheck,
    pub constants: RuntimeConstants,
    pub lifted: LiftedChannel,
    pub problem: MaspProblem,
    pub search: SearchOptions,
    #[serde(skip)]
    pub table: GammaPhiTable,
}

/// Certifies one channel.
///
/// With `t_max = None` the largest feasible `T_M` is searched for and used;
/// otherwise the given value is checked and `max_t_max` reports the search
/// result for reference.
pub fn certify_channel(
    lifted: &LiftedChannel,
    phi0: &[f64],
    t_max: Option<f64>,
    pi: f64,
    search: SearchOptions,
) -> Result<ChannelCertification> {
    let problem = MaspProblem::from_lifted(lifted, phi0)?;
    let searched = max_tm(&problem, search.t_lo, search.t_hi, search.tol, search.grid_step);
    let t_max = match (t_max, &searched) {
        (Some(t), _) => t,
        (None, Ok(t)) => *t,
        (None, Err(e)) => return Err(e.clone()),
    };
    let check = check_masp(&problem, t_max, search.grid_step)?;
    let eps_l = vec![lifted.epsilon; lifted.madns + 2];
    // Constants are computed whenever φ stays positive, so an uncertified
    // design can still be run against the monitor.
    let constants = match compute_runtime_constants(&check, &lifted.gamma, pi, &eps_l) {
        Ok(c) => c,
        Err(e) if check.feasible => return Err(e),
        Err(_) => RuntimeConstants {
            rho_bar: 0.0,
            rho_hat: 0.0,
            rho_tilde: 0.0,
            varpi_min: pi,
            phi_min: f64::NAN,
            phi_max: f64::NAN,
            gamma_min: f64::NAN,
            gamma_max: f64::NAN,
            pi,
            t_max,
        },
    };
    let table = GammaPhiTable::new(lifted.gamma.clone(), check.trajectories.clone(), t_max);
    Ok(ChannelCertification {
        t_max,
        max_t_max: searched.ok(),
        check,
        constants,
        lifted: lifted.clone(),
        problem,
        search,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;
    use crate::storage::lift_constants;
    use approx::assert_relative_eq;

    fn example1_problem(eps_check: f64, madns: usize) -> MaspProblem {
        let cert = registry::example1_certificate(eps_check, registry::Example1Params::default()).unwrap();
        let lifted = lift_constants(&cert.channels[0], 0.5, madns).unwrap();
        MaspProblem::from_lifted(&lifted, &[10.0]).unwrap()
    }

    #[test]
    fn example1_delay_free_boundary() {
        let p = example1_problem(1.0, 0);
        assert!(check_masp(&p, 0.0109, 1e-6).unwrap().feasible);
        assert!(!check_masp(&p, 0.0120, 1e-6).unwrap().feasible);
    }

    #[test]
    fn condition_counts() {
        let p = example1_problem(1.0, 0);
        let c = check_masp(&p, 0.005, 1e-5).unwrap();
        assert_eq!(c.transmit_conditions, 1);
        assert_eq!(c.order_conditions, 1);
        assert_eq!(c.trajectories.len(), 2);
    }

    #[test]
    fn identical_levels_have_zero_order_margin() {
        let p = MaspProblem {
            madns: 1,
            lambda_tilde: 0.5,
            l_gain: vec![2.0; 3],
            gamma: vec![10.0; 3],
            phi0: vec![5.0; 3],
        };
        let c = check_masp(&p, 0.01, 1e-5).unwrap();
        assert_eq!(c.margin_order, 0.0);
    }

    #[test]
    fn bisection_row_one() {
        let expected = [0.0109, 0.0055, 0.0027, 0.0014];
        for (d, want) in expected.iter().enumerate() {
            let t = max_tm(&example1_problem(1.0, d), 1e-6, 0.05, 1e-5, 1e-6).unwrap();
            assert!((t - want).abs() <= 2e-4, "D = {d}: {t}");
        }
    }

    #[test]
    fn infeasible_lower_bound_is_an_error() {
        let p = example1_problem(1.0, 0);
        assert!(matches!(max_tm(&p, 0.02, 0.05, 1e-5, 1e-5), Err(Error::Certification(_))));
    }

    #[test]
    fn runtime_constants_example1() {
        let cert = registry::example1_certificate(0.5, registry::Example1Params::default()).unwrap();
        let lifted = lift_constants(&cert.channels[0], 0.5, 1).unwrap();
        let c = certify_channel(&lifted, &[10.0], Some(0.005), 0.99, SearchOptions::default()).unwrap();
        assert!(c.check.feasible);
        assert_eq!(c.constants.rho_bar, 0.0);
        assert_eq!(c.constants.rho_tilde, 0.0);
        assert_eq!(c.constants.varpi_min, 0.99);
        assert_relative_eq!(c.constants.gamma_max, 4.0 * lifted.gamma[0]);
        assert!(c.constants.rho_hat <= 0.5 * (c.constants.phi_min / c.constants.gamma_max).min(1.0));
        assert_relative_eq!(c.constants.varpi(0.005), 0.99);
    }

    #[test]
    fn step_halving_is_stable() {
        let p = example1_problem(0.5, 1);
        let a = max_tm(&p, 1e-6, 0.05, 1e-5, 2e-6).unwrap();
        let b = max_tm(&p, 1e-6, 0.05, 1e-5, 1e-6).unwrap();
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}
