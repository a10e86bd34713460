//! Acceptance checks for the certification and closed-loop pipeline.
//!
//! Every check returns an [`Outcome`] instead of panicking, so a runner can
//! print one verdict line per check and keep going after a failure.

use std::time::{Duration, Instant};

mod certification;
mod closed_loop;
mod ledger;

pub use ledger::{replay_ledger, LedgerStats};

/// Verdict of one acceptance check.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    /// One-line summary of the measured quantities.
    pub detail: String,
    /// Extra context printed under the verdict line.
    pub notes: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
            notes: Vec::new(),
        }
    }

    fn note(mut self, n: impl Into<String>) -> Self {
        self.notes.push(n.into());
        self
    }

    /// Fails the outcome if `elapsed` exceeds `limit`.
    fn within(mut self, elapsed: Duration, limit: Duration) -> Self {
        if elapsed > limit {
            self.pass = false;
            self.notes.push(format!("runtime {:.1} s exceeds {:.0} s", elapsed.as_secs_f64(), limit.as_secs_f64()));
        }
        self
    }
}

/// A named acceptance check.
pub struct Check {
    pub name: &'static str,
    pub run: fn() -> Outcome,
}

pub const CHECKS: &[Check] = &[
    Check {
        name: "table2_masp_grid",
        run: certification::table2,
    },
    Check {
        name: "phi_closed_form",
        run: certification::phi_closed_form,
    },
    Check {
        name: "bookkeeping_replay",
        run: ledger::bookkeeping,
    },
    Check {
        name: "in_flight_estimate_bound",
        run: closed_loop::in_flight_bound,
    },
    Check {
        name: "storage_jump_inequalities",
        run: ledger::storage_jumps,
    },
    Check {
        name: "lyapunov_monitor",
        run: closed_loop::monitor,
    },
    Check {
        name: "table3_aiet_sweep",
        run: closed_loop::table3,
    },
    Check {
        name: "example1_headline",
        run: closed_loop::example1,
    },
    Check {
        name: "dynamic_vs_static",
        run: closed_loop::dominance,
    },
    Check {
        name: "example2_convergence",
        run: closed_loop::example2,
    },
];

/// Runs a check and measures its wall time.
pub fn timed(check: &Check) -> (Outcome, Duration) {
    let start = Instant::now();
    let out = (check.run)();
    (out, start.elapsed())
}
