//! Offline certification: the `T_M` grid and the `φ` solver.

use std::time::{Duration, Instant};

use petc_core::certify::solve_phi;
use petc_core::scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

/// Reference `T_M` in seconds, rows `ε̌ ∈ {1, 0.5, 0.1, 0.01}`, columns `D = 0..3`.
pub const TABLE2: [(f64, [f64; 4]); 4] = [
    (1.0, [0.0109, 0.0055, 0.0027, 0.0014]),
    (0.5, [0.0108, 0.0054, 0.0027, 0.0013]),
    (0.1, [0.0098, 0.0049, 0.0025, 0.0012]),
    (0.01, [0.0058, 0.0029, 0.0014, 0.0007]),
];

const TABLE2_TOL: f64 = 2e-4;

pub fn table2() -> Outcome {
    let start = Instant::now();
    let cfg = scenario::preset("table2").expect("preset exists");
    let cells = match cfg.certify_grid() {
        Ok(c) => c,
        Err(e) => return Outcome::new(false, format!("certification failed: {e}")),
    };
    let mut worst: f64 = 0.0;
    let mut misses = Vec::new();
    let mut checked = 0;
    for &(eps, row) in &TABLE2 {
        for (d, want) in row.iter().enumerate() {
            let Some(cell) = cells.iter().find(|c| c.eps_check == eps && c.madns == d) else {
                misses.push(format!("eps_check={eps} D={d}: missing"));
                continue;
            };
            for (i, got) in cell.t_max.iter().enumerate() {
                checked += 1;
                match got {
                    Some(t) => {
                        let err = (t - want).abs();
                        worst = worst.max(err);
                        if err > TABLE2_TOL {
                            misses.push(format!("eps_check={eps} D={d} channel {i}: {t:.6} vs {want}"));
                        }
                    }
                    None => misses.push(format!("eps_check={eps} D={d} channel {i}: infeasible")),
                }
            }
        }
    }
    let mut out = Outcome::new(
        misses.is_empty() && checked == 32,
        format!("{checked} cell-channel values, worst |ΔT_M| = {worst:.2e} s (tol {TABLE2_TOL:.0e})"),
    );
    for m in misses {
        out = out.note(m);
    }
    let row = |eps: f64| {
        cells
            .iter()
            .filter(|c| c.eps_check == eps)
            .map(|c| c.t_max[0].map_or("-".into(), |t| format!("{t:.6}")))
            .collect::<Vec<_>>()
            .join(" ")
    };
    for &(eps, _) in &TABLE2 {
        out = out.note(format!("eps_check={eps}: {}", row(eps)));
    }
    out.within(start.elapsed(), Duration::from_secs(60))
}

pub fn phi_closed_form() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0f1);
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    for _ in 0..100 {
        let gamma = 10f64.powf(rng.gen_range(-1.0..2.0));
        let phi0 = 10f64.powf(rng.gen_range(-1.0..1.5));
        // Stop before arctan φ0 − γT reaches −π/4, well short of the pole.
        let t_end = (phi0.atan() + std::f64::consts::FRAC_PI_4) / gamma;
        let horizon = rng.gen_range(0.05..1.0) * t_end;
        let step = horizon / 500.0;
        let traj = match solve_phi(0.0, gamma, phi0, horizon, step) {
            Ok(t) => t,
            Err(_) => {
                bad += 1;
                continue;
            }
        };
        for (k, v) in traj.values.iter().enumerate() {
            let t = k as f64 * traj.step;
            let exact = (phi0.atan() - gamma * t).tan();
            worst = worst.max((v - exact).abs());
        }
    }
    Outcome::new(
        bad == 0 && worst <= 1e-8,
        format!("100 instances, max |φ − tan(arctan φ0 − γt)| = {worst:.2e} (tol 1e-8)"),
    )
    .within(start.elapsed(), Duration::from_secs(5))
}
