//! Trigger values re-evaluated on recorded traces.

use petc_core::hybrid::{transmission_error, updating_error, HybridState, NetworkedSystem};
use petc_core::netsim::{self, RowKind, RunOutput};
use petc_core::scenario::{self, Built};
use petc_core::trigger::{Capability, EtLocalState, TriggerPolicy};

fn built(name: &str, horizon: f64, profile: Capability) -> Built {
    let mut cfg = scenario::preset(name).unwrap();
    cfg.simulation.horizon = horizon;
    cfg.build_with(profile).unwrap()
}

/// Calls `f(row index, pre-jump state, channel, transmitter memory)` at every
/// sampling row, rebuilding the memories from the transmissions in the trace.
fn for_each_sample(sys: &NetworkedSystem, out: &RunOutput, mut f: impl FnMut(usize, &HybridState, usize, &EtLocalState)) {
    let mut locals: Vec<EtLocalState> = sys.channels.iter().map(|c| EtLocalState::new(c.dim(), c.madns)).collect();
    let rows = &out.trace.rows;
    for r in 1..rows.len() {
        let row = &rows[r];
        if !matches!(row.kind, RowKind::Sample | RowKind::Transmit) {
            continue;
        }
        let i = row.channel.unwrap();
        assert_eq!(locals[i].lhat(), row.pre_lhat.unwrap());
        f(r, &rows[r - 1].state, i, &locals[i]);
        let v_bar = (row.kind == RowKind::Transmit).then(|| {
            let v = sys.channel_signal(&row.state.x, i);
            let eb = transmission_error(sys, &row.state, i);
            v.iter().zip(&eb).map(|(a, b)| a + b).collect()
        });
        locals[i].lhat_update(v_bar);
        assert_eq!(locals[i].lhat(), row.lhat[i]);
    }
}

fn policy(name: &str, profile: Capability) -> TriggerPolicy {
    built(name, 0.0, profile).scenario.policy
}

#[test]
fn no_ack_is_never_less_conservative() {
    for name in ["example1", "example2"] {
        let b = built(name, 2.0, Capability::FullInfo);
        let no_ack = policy(name, Capability::NoAck);
        let sys = &b.scenario.system;
        let out = netsim::run(&b.scenario).unwrap();
        let mut checked = 0;
        let mut strictly = 0;
        for_each_sample(sys, &out, |r, q, i, local| {
            if local.lhat() < q.channels[i].l {
                return;
            }
            let full = b.scenario.policy.g_s(sys, q, i, local).unwrap();
            let na = no_ack.g_s(sys, q, i, local).unwrap();
            assert!(na <= full + 1e-9 * (1.0 + full.abs()), "{name} row {r}: {na} > {full}");
            checked += 1;
            if na < full - 1e-9 * (1.0 + full.abs()) {
                strictly += 1;
            }
        });
        assert!(checked > 100);
        if name == "example1" {
            assert!(strictly > 0, "hypotheses never tightened the trigger");
        }
    }
}

#[test]
fn static_trigger_dominates_per_decision() {
    for name in ["example1", "example2"] {
        let b = built(name, 2.0, Capability::FullInfo);
        let stat = policy(name, Capability::Static);
        let sys = &b.scenario.system;
        let out = netsim::run(&b.scenario).unwrap();
        let mut positive_eta = 0;
        for_each_sample(sys, &out, |_, q, i, local| {
            let dynamic = b.scenario.policy.g_s(sys, q, i, local).unwrap();
            let s = stat.g_s(sys, q, i, local).unwrap();
            let eta = q.channels[i].eta;
            assert!(s <= dynamic);
            assert!((dynamic - s - eta).abs() <= 1e-12 * (1.0 + dynamic.abs()));
            if eta > 0.0 {
                positive_eta += 1;
            }
        });
        assert!(positive_eta > 0);
    }
}

#[test]
fn decisions_survive_lookup_refinement() {
    let mut cfg = scenario::preset("example2").unwrap();
    cfg.simulation.horizon = 1.0;
    let a = cfg.build().unwrap();
    cfg.certificates.search.grid_step /= 2.0;
    let b = cfg.build().unwrap();
    let ra = netsim::run(&a.scenario).unwrap();
    let rb = netsim::run(&b.scenario).unwrap();
    let sent = |o: &RunOutput| o.trace.packets.iter().map(|p| (p.channel, p.sample_index)).collect::<Vec<_>>();
    assert_eq!(sent(&ra), sent(&rb));
}

/// `φ(τ)` by a fine explicit midpoint scheme, independent of the library solver.
fn phi_reference(l_gain: f64, gamma: f64, phi0: f64, tau: f64) -> f64 {
    let f = |p: f64| -2.0 * l_gain * p - gamma * (p * p + 1.0);
    let n = 20_000usize.max((tau / 1e-8) as usize);
    let h = tau / n as f64;
    let mut p = phi0;
    for _ in 0..n {
        let k = f(p + 0.5 * h * f(p));
        p += h * k;
    }
    p
}

/// `g_t` of example 1 at recorded transmissions, written out term by term.
#[test]
fn post_transmission_value_matches_independent_evaluation() {
    let b = built("example1", 3.0, Capability::FullInfo);
    let sys = &b.scenario.system;
    let out = netsim::run(&b.scenario).unwrap();
    let certs = &b.certifications;
    let mut checked = 0;
    for r in 1..out.trace.rows.len() {
        let row = &out.trace.rows[r];
        if row.kind != RowKind::Transmit || checked >= 25 {
            continue;
        }
        let q = &out.trace.rows[r - 1].state;
        let i = row.channel.unwrap();
        let c = &q.channels[i];
        let cert = &certs[i];
        let k = cert.constants;
        let lift = &cert.lifted;
        let v = sys.channel_signal(&q.x, i)[0];
        let e = updating_error(sys, q, i)[0];
        let lt = lift.lambda_tilde;
        let mut acc = e;
        let mut wt = lt.powi(c.l as i32) * acc.abs();
        for m in 1..=c.l {
            acc += c.theta[m - 1][0];
            wt = wt.max(lt.powi((c.l - m) as i32) * acc.abs());
        }
        let dv = 0.5 * v * v;
        let dvt = 0.5 * c.v_tilde[0] * c.v_tilde[0];
        let varpi = 1.0 - (1.0 - k.pi) * c.tau_hat / cert.t_max;
        let gp = cert.table.gamma_phi(c.l, c.tau_hat).unwrap();
        let phi_l = phi_reference(lift.l_gain[c.l], lift.gamma[c.l], 10.0, c.tau_hat);
        assert!((gp / lift.gamma[c.l] - phi_l).abs() <= 1e-7 * phi_l, "lookup {gp} vs {phi_l}");
        let a = (lift.gamma[c.l + 1] * 10.0 * lt * lt * wt * wt).max(k.rho_hat * dv);
        let b = (gp * wt * wt).max(k.rho_hat * dv);
        let g_t = c.eta - k.rho_bar * dv + k.rho_bar * dv.max(varpi * dvt) - a + b;
        let expected = g_t.max(0.0);
        let got = row.state.channels[i].eta;
        let scale = 1.0 + c.eta + a + b;
        assert!((got - expected).abs() <= 1e-12 * scale, "row {r}: {got} vs {expected}");
        checked += 1;
    }
    assert_eq!(checked, 25);
}

#[test]
fn example1_eta_inflow() {
    let b = built("example1", 0.0, Capability::FullInfo);
    let sys = &b.scenario.system;
    let mut q = sys.initial_state(&[1.0, 2.0]).unwrap();
    q.channels[0].v_hat = vec![3.0];
    q.channels[0].eta = 4.0;
    let local = EtLocalState::new(1, 1);
    assert_eq!(b.certifications[0].constants.rho_tilde, 0.0);
    let f = b.scenario.policy.eta_flow(&q, 0, &local);
    assert!((f - (-0.01 * 4.0 + 2.0 * 0.5 * 9.0)).abs() < 1e-12);
}

#[test]
fn no_ack_with_no_history_uses_latest_value() {
    let mut local = EtLocalState::new(1, 0);
    assert_eq!(local.lhat(), 0);
    local.lhat_update(Some(vec![2.5]));
    assert_eq!(local.lhat(), 0, "D = 0 keeps the estimate at zero");
    assert_eq!(local.latest(), &[2.5]);
    let mut local = EtLocalState::new(1, 1);
    local.lhat_update(Some(vec![1.0]));
    assert_eq!(local.lhat(), 1);
    local.lhat_update(None);
    assert_eq!(local.lhat(), 0);
}

#[test]
fn trigger_values_at_the_origin() {
    for name in ["example1", "example2"] {
        let b = built(name, 0.0, Capability::FullInfo);
        let sys = &b.scenario.system;
        let mut q = sys.initial_state(&[0.0, 0.0]).unwrap();
        for c in q.channels.iter_mut() {
            c.eta = 0.7;
            c.tau_hat = 0.5 * b.certifications[0].t_max;
        }
        let locals = b.scenario.policy.local_states(sys);
        for i in 0..q.channels.len() {
            let g = b.scenario.policy.g_s(sys, &q, i, &locals[i]).unwrap();
            assert!((g - 0.7).abs() < 1e-15);
            assert!((b.scenario.policy.g_t(sys, &q, i, &locals[i]).unwrap() - 0.7).abs() < 1e-15);
        }
    }
}

#[test]
fn stale_sample_is_a_certification_error() {
    let b = built("example2", 0.0, Capability::FullInfo);
    let sys = &b.scenario.system;
    let mut q = sys.initial_state(&[0.1, 0.0]).unwrap();
    q.channels[0].tau_hat = 1.01 * b.certifications[0].t_max;
    let local = EtLocalState::new(2, 1);
    let err = b.scenario.policy.g_s(sys, &q, 0, &local).unwrap_err();
    assert!(err.is_certification());
}
