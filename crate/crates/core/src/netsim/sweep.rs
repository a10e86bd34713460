//! Monte Carlo sweeps over configurations.
//!
//! Run `r` uses the same initial state and seeds in every cell, so cells
//! differ only by their configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{derive_seed, run, Disturbance, RunOptions, RecordMode, Scenario};
use crate::error::{Error, Result};
use crate::hybrid::NetworkedSystem;
use crate::trigger::TriggerPolicy;

/// One configuration of a sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub label: String,
    pub system: NetworkedSystem,
    pub policy: TriggerPolicy,
    pub disturbance: Disturbance,
    pub horizon: f64,
    pub options: RunOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub runs: usize,
    /// Per-component bounds of the uniformly drawn initial state.
    pub x0_box: Vec<(f64, f64)>,
    pub master_seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChannelSummary {
    pub mean_aiet: f64,
    pub std_aiet: f64,
    pub mean_transmissions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub label: String,
    pub runs: usize,
    pub completed: usize,
    pub channels: Vec<ChannelSummary>,
    pub mean_final_norm: f64,
    /// Error message of every failed run, tagged with its run index.
    pub failures: Vec<(usize, String)>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Initial state of run `r`.
pub fn draw_x0(opts: &SweepOptions, r: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.master_seed, r as u64, 0));
    opts.x0_box
        .iter()
        .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
        .collect()
}

fn run_cell(cell: &SweepCell, opts: &SweepOptions) -> CellSummary {
    let results: Vec<(usize, Result<super::Metrics>)> = (0..opts.runs)
        .into_par_iter()
        .map(|r| {
            let mut options = cell.options.clone();
            options.record = RecordMode::None;
            let sc = Scenario {
                system: cell.system.clone(),
                policy: cell.policy.clone(),
                x0: draw_x0(opts, r),
                disturbance: cell.disturbance,
                horizon: cell.horizon,
                schedule_seed: derive_seed(opts.master_seed, r as u64, 1),
                delay_seed: derive_seed(opts.master_seed, r as u64, 2),
                options,
            };
            (r, run(&sc).map(|o| o.metrics))
        })
        .collect();
    let n_ch = cell.system.channels.len();
    let mut aiets = vec![Vec::new(); n_ch];
    let mut counts = vec![Vec::new(); n_ch];
    let mut norms = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results {
        match res {
            Ok(m) => {
                norms.push(m.final_norm);
                for (i, c) in m.channels.iter().enumerate() {
                    if let Some(a) = c.aiet {
                        aiets[i].push(a);
                    }
                    counts[i].push(c.transmissions as f64);
                }
            }
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    let channels = (0..n_ch)
        .map(|i| {
            let (mean_aiet, std_aiet) = mean_std(&aiets[i]);
            ChannelSummary {
                mean_aiet,
                std_aiet,
                mean_transmissions: mean_std(&counts[i]).0,
            }
        })
        .collect();
    CellSummary {
        label: cell.label.clone(),
        runs: opts.runs,
        completed: norms.len(),
        channels,
        mean_final_norm: mean_std(&norms).0,
        failures,
    }
}

/// Runs every cell `opts.runs` times.
pub fn sweep(cells: &[SweepCell], opts: &SweepOptions) -> Result<Vec<CellSummary>> {
    for cell in cells {
        if opts.x0_box.len() != cell.system.plant.n_x() {
            return Err(Error::Config(format!(
                "initial-state box has {} bounds, cell '{}' needs {}",
                opts.x0_box.len(),
                cell.label,
                cell.system.plant.n_x()
            )));
        }
    }
    let work = || cells.iter().map(|c| run_cell(c, opts)).collect();
    match opts.jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn initial_states_are_reproducible() {
        let opts = SweepOptions {
            runs: 3,
            x0_box: vec![(-10.0, 10.0), (5.0, 5.0)],
            master_seed: 9,
            jobs: None,
        };
        let a = draw_x0(&opts, 1);
        assert_eq!(a, draw_x0(&opts, 1));
        assert_ne!(a, draw_x0(&opts, 2));
        assert_eq!(a[1], 5.0);
        assert!(a[0].abs() <= 10.0);
    }
}
