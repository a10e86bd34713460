//! Jump-map oracles: the `(e, θ)` ledger against a full history replay, and
//! the jump inequalities of `W̃`.

use std::sync::Arc;

use petc_core::hybrid::{
    jump_arrival, jump_sample_only, jump_transmit, transmission_error, updating_error, ChannelSpec, HoldEta,
    HybridState, NetworkedSystem, NextAction, PlantModel,
};
use petc_core::protocols::Protocol;
use petc_core::storage::build_w_tilde;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const D: usize = 2;
const NODES: [usize; 3] = [1, 2, 1];

fn protocols() -> Vec<(&'static str, Protocol)> {
    vec![
        ("SD", Protocol::sd(NODES.iter().sum())),
        ("RR", Protocol::round_robin(&NODES).expect("valid nodes")),
        ("TOD", Protocol::tod(&NODES).expect("valid nodes")),
    ]
}

/// A stable linear loop `ẋ = −x + u`, `u = −v̂/2`, broadcast over one channel.
fn system(protocol: Protocol) -> NetworkedSystem {
    let n = protocol.dim();
    let plant = PlantModel::with_static_controller(
        n,
        n,
        n,
        0,
        Arc::new(|x: &[f64], u: &[f64], _w: &[f64]| x.iter().zip(u).map(|(a, b)| -a + b).collect()),
        Arc::new(|x: &[f64]| x.to_vec()),
        Arc::new(|y: &[f64]| y.iter().map(|v| -0.5 * v).collect()),
    )
    .expect("valid plant");
    let channel = ChannelSpec {
        offset: 0,
        protocol,
        madns: D,
        t_min: 0.001,
        t_max: 0.002,
    };
    NetworkedSystem::new(plant, vec![channel]).expect("valid system")
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs())))
}

/// Event mix of one replay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerStats {
    pub transmits: usize,
    pub discards: usize,
    pub arrivals: usize,
}

/// Drives `jumps` random events through the jump maps and compares every
/// post-jump state with a replay of the sent and received values.
pub fn replay_ledger(protocol: &Protocol, jumps: usize, seed: u64) -> Result<LedgerStats, String> {
    let sys = system(protocol.clone());
    let n = protocol.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let mut q: HybridState = sys.initial_state(&x0).map_err(|e| e.to_string())?;
    // sent[k] is what receivers hold after the k-th packet; sent[0] is the initial hold.
    let mut sent: Vec<Vec<f64>> = vec![vec![0.0; n]];
    let mut received = 0usize;
    let mut stats = LedgerStats::default();
    for step in 0..jumps {
        for x in q.x.iter_mut() {
            *x += rng.gen_range(-1.0..1.0);
        }
        let l = q.channels[0].l;
        let jumped = if l > 0 && (l == D + 1 || rng.gen_bool(0.45)) {
            q.set_next_action(0, NextAction::Update).map_err(|e| e.to_string())?;
            received += 1;
            stats.arrivals += 1;
            jump_arrival(&sys, &q, 0)
        } else {
            q.set_next_action(0, NextAction::Transmit).map_err(|e| e.to_string())?;
            if rng.gen_bool(0.6) {
                let v = sys.channel_signal(&q.x, 0);
                let last = sent.last().expect("non-empty");
                let e_bar: Vec<f64> = last.iter().zip(&v).map(|(a, b)| a - b).collect();
                let h = protocol.apply_h(q.channels[0].k_bar, &e_bar);
                sent.push(v.iter().zip(&h).map(|(a, b)| a + b).collect());
                stats.transmits += 1;
                jump_transmit(&sys, &q, 0, &HoldEta)
            } else {
                stats.discards += 1;
                jump_sample_only(&sys, &q, 0, &HoldEta)
            }
        };
        q = jumped.map_err(|e| format!("step {step}: {e}"))?;
        let c = &q.channels[0];
        let v = sys.channel_signal(&q.x, 0);
        let fail = |what: &str| Err(format!("step {step}: {what}"));
        if !close(&c.v_hat, &sent[received]) {
            return fail("held value");
        }
        let e_expected: Vec<f64> = sent[received].iter().zip(&v).map(|(a, b)| a - b).collect();
        if !close(&updating_error(&sys, &q, 0), &e_expected) {
            return fail("updating error");
        }
        let eb_expected: Vec<f64> = sent.last().expect("non-empty").iter().zip(&v).map(|(a, b)| a - b).collect();
        if !close(&transmission_error(&sys, &q, 0), &eb_expected) {
            return fail("transmission error");
        }
        if c.k_bar as usize != sent.len() - 1 || c.k_tilde as usize != received {
            return fail("packet counters");
        }
        if c.l as u64 != c.k_bar - c.k_tilde || c.l > D + 1 {
            return fail("in-flight count");
        }
        if c.theta[c.l..].iter().flatten().any(|&z| z != 0.0) {
            return fail("theta tail");
        }
        q.check_invariants().map_err(|e| format!("step {step}: {e}"))?;
    }
    Ok(stats)
}

pub fn bookkeeping() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut notes = Vec::new();
    for (name, p) in protocols() {
        for seed in 0..3 {
            match replay_ledger(&p, 1000, seed) {
                Ok(s) => {
                    if seed == 0 {
                        parts.push(format!("{name} {}/{}/{}", s.transmits, s.discards, s.arrivals));
                    }
                    if s.transmits < 100 || s.discards < 100 || s.arrivals < 100 {
                        pass = false;
                        notes.push(format!("{name} seed {seed}: degenerate event mix {s:?}"));
                    }
                }
                Err(e) => {
                    pass = false;
                    notes.push(format!("{name} seed {seed}: {e}"));
                }
            }
        }
    }
    let mut out = Outcome::new(
        pass,
        format!(
            "3 x 1000 jumps per protocol, D = {D}; transmit/discard/arrival (seed 0): {}",
            parts.join(", ")
        ),
    );
    out.notes = notes;
    out
}

const INSTANCES: usize = 10_000;
const LAMBDA_TILDE: f64 = 0.9;

/// Random reachable ledgers: a random walk through the jump maps with
/// rescaled plant states, checking `W̃` across every transmit and arrival.
fn storage_jumps_for(protocol: &Protocol, seed: u64) -> Result<(usize, usize, f64, f64), String> {
    let sys = system(protocol.clone());
    let w = build_w_tilde(protocol, LAMBDA_TILDE).map_err(|e| e.to_string())?;
    let n = protocol.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |q: &HybridState| {
        let c = &q.channels[0];
        w.eval(c.k_bar, c.l, &c.theta, &updating_error(&sys, q, 0))
    };
    let mut q = sys.initial_state(&vec![1.0; n]).map_err(|e| e.to_string())?;
    let (mut transmits, mut arrivals) = (0, 0);
    let (mut worst_t, mut worst_a) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    while transmits < INSTANCES || arrivals < INSTANCES {
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        for x in q.x.iter_mut() {
            *x = scale * rng.gen_range(-1.0..1.0);
        }
        let l = q.channels[0].l;
        let before = eval(&q);
        if l > 0 && (l == D + 1 || rng.gen_bool(0.5)) {
            q.set_next_action(0, NextAction::Update).map_err(|e| e.to_string())?;
            q = jump_arrival(&sys, &q, 0).map_err(|e| e.to_string())?;
            let margin = (eval(&q) - before) / (1.0 + before);
            worst_a = worst_a.max(margin);
            if margin > 1e-12 {
                return Err(format!("arrival raised W̃ from {before} to {}", eval(&q)));
            }
            arrivals += 1;
        } else {
            q.set_next_action(0, NextAction::Transmit).map_err(|e| e.to_string())?;
            q = jump_transmit(&sys, &q, 0, &HoldEta).map_err(|e| e.to_string())?;
            let margin = (eval(&q) - LAMBDA_TILDE * before) / (1.0 + before);
            worst_t = worst_t.max(margin);
            if margin > 1e-12 {
                return Err(format!("transmit: W̃ {} > λ̃ · {before}", eval(&q)));
            }
            transmits += 1;
        }
    }
    Ok((transmits, arrivals, worst_t, worst_a))
}

pub fn storage_jumps() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut notes = Vec::new();
    for (k, (name, p)) in protocols().into_iter().enumerate() {
        match storage_jumps_for(&p, 100 + k as u64) {
            Ok((t, a, wt, wa)) => {
                parts.push(format!("{name}: {t} transmits (worst {wt:.1e}), {a} arrivals (worst {wa:.1e})"));
                notes.push(format!("{name}: λ = {:.4}, λ_W = {:.4}", p.lambda, p.lambda_w));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name}: violation"));
                notes.push(format!("{name}: {e}"));
            }
        }
    }
    let mut out = Outcome::new(pass, format!("λ̃ = {LAMBDA_TILDE}, tol 1e-12; {}", parts.join("; ")));
    out.notes = notes;
    out
}
