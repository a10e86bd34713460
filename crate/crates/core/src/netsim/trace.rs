//! Trace records and their CSV form.
//!
//! Column order: `t, j, kind, channel, g_s, pre_l, pre_lhat`, the state `x_k`,
//! then for every channel `c` the blocks `c{c}_v_hat_k`, `c{c}_theta{b}_k`,
//! `c{c}_v_tilde_k`, `c{c}_tau_hat`, `c{c}_k_bar`, `c{c}_k_tilde`, `c{c}_l`,
//! `c{c}_m_hat`, `c{c}_eta`, `c{c}_lhat`, the derived error `c{c}_e_k`, and
//! finally `U` when a certificate was supplied. Empty cells mean "not
//! applicable". Reals are written with 15 significant digits.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hybrid::{updating_error, ChannelState, HybridState, NetworkedSystem, NextAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// Initial state.
    Start,
    /// End of a flow interval (pre-jump state of the next event).
    Flow,
    /// Sampling instant without transmission.
    Sample,
    Transmit,
    Arrival,
}

impl RowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::Start => "start",
            RowKind::Flow => "flow",
            RowKind::Sample => "sample",
            RowKind::Transmit => "transmit",
            RowKind::Arrival => "arrival",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "start" => RowKind::Start,
            "flow" => RowKind::Flow,
            "sample" => RowKind::Sample,
            "transmit" => RowKind::Transmit,
            "arrival" => RowKind::Arrival,
            _ => return None,
        })
    }

    pub fn is_jump(self) -> bool {
        matches!(self, RowKind::Sample | RowKind::Transmit | RowKind::Arrival)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub kind: RowKind,
    pub channel: Option<usize>,
    pub state: HybridState,
    pub lhat: Vec<usize>,
    /// Trigger value at sampling rows.
    pub g_s: Option<f64>,
    /// In-flight count just before a sampling jump.
    pub pre_l: Option<usize>,
    /// `l̂` just before a sampling jump.
    pub pre_lhat: Option<usize>,
}

impl TraceRow {
    pub fn t(&self) -> f64 {
        self.state.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PacketRecord {
    pub channel: usize,
    pub sample_index: usize,
    pub sent: f64,
    pub arrival: f64,
    /// Latest admissible arrival `s_{j+D+1}`.
    pub bound: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub packets: Vec<PacketRecord>,
}

fn real(out: &mut String, v: f64) {
    let _ = write!(out, ",{v:.14e}");
}

impl Trace {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn header(sys: &NetworkedSystem, with_u: bool) -> String {
        let mut h = String::from("t,j,kind,channel,g_s,pre_l,pre_lhat");
        for k in 0..sys.plant.n_x() {
            let _ = write!(h, ",x_{k}");
        }
        for (c, spec) in sys.channels.iter().enumerate() {
            let n = spec.dim();
            for k in 0..n {
                let _ = write!(h, ",c{c}_v_hat_{k}");
            }
            for b in 0..=spec.madns {
                for k in 0..n {
                    let _ = write!(h, ",c{c}_theta{}_{k}", b + 1);
                }
            }
            for k in 0..n {
                let _ = write!(h, ",c{c}_v_tilde_{k}");
            }
            for f in ["tau_hat", "k_bar", "k_tilde", "l", "m_hat", "eta", "lhat"] {
                let _ = write!(h, ",c{c}_{f}");
            }
            for k in 0..n {
                let _ = write!(h, ",c{c}_e_{k}");
            }
        }
        if with_u {
            h.push_str(",U");
        }
        h
    }

    /// Serialises the trace; `u` holds one monitor value per row.
    pub fn to_csv(&self, sys: &NetworkedSystem, u: Option<&[f64]>) -> String {
        let mut out = Self::header(sys, u.is_some());
        out.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            let q = &row.state;
            let _ = write!(out, "{:.14e},{},{}", q.t, q.j, row.kind.as_str());
            let opt = |o: Option<usize>| o.map_or(String::new(), |v| v.to_string());
            let _ = write!(out, ",{}", opt(row.channel));
            match row.g_s {
                Some(g) => real(&mut out, g),
                None => out.push(','),
            }
            let _ = write!(out, ",{},{}", opt(row.pre_l), opt(row.pre_lhat));
            for &x in &q.x {
                real(&mut out, x);
            }
            for (c, ch) in q.channels.iter().enumerate() {
                for &v in &ch.v_hat {
                    real(&mut out, v);
                }
                for block in &ch.theta {
                    for &v in block {
                        real(&mut out, v);
                    }
                }
                for &v in &ch.v_tilde {
                    real(&mut out, v);
                }
                real(&mut out, ch.tau_hat);
                let _ = write!(out, ",{},{},{},{}", ch.k_bar, ch.k_tilde, ch.l, ch.m_hat.sign());
                real(&mut out, ch.eta);
                let _ = write!(out, ",{}", row.lhat[c]);
                for v in updating_error(sys, q, c) {
                    real(&mut out, v);
                }
            }
            if let Some(u) = u {
                real(&mut out, u[r]);
            }
            out.push('\n');
        }
        out
    }

    /// Parses a trace written by [`Trace::to_csv`]. Derived columns are ignored.
    pub fn from_csv(text: &str, sys: &NetworkedSystem) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Config("empty trace file".into()))?;
        let expected_plain = Self::header(sys, false);
        let expected_u = Self::header(sys, true);
        if header != expected_plain && header != expected_u {
            return Err(Error::Config("trace header does not match the scenario".into()));
        }
        let bad = |line: usize, what: &str| Error::Config(format!("trace line {line}: {what}"));
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            let ln = ln + 2;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            let mut it = cells.iter();
            let mut next = || it.next().copied().ok_or_else(|| bad(ln, "too few columns"));
            let f = |s: &str| s.parse::<f64>().map_err(|_| bad(ln, "bad number"));
            let u = |s: &str| s.parse::<u64>().map_err(|_| bad(ln, "bad integer"));
            let ou = |s: &str| -> Result<Option<usize>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    u(s).map(|v| Some(v as usize))
                }
            };
            let t = f(next()?)?;
            let j = u(next()?)?;
            let kind = RowKind::parse(next()?).ok_or_else(|| bad(ln, "bad kind"))?;
            let channel = ou(next()?)?;
            let g = next()?;
            let g_s = if g.is_empty() { None } else { Some(f(g)?) };
            let pre_l = ou(next()?)?;
            let pre_lhat = ou(next()?)?;
            let mut x = Vec::with_capacity(sys.plant.n_x());
            for _ in 0..sys.plant.n_x() {
                x.push(f(next()?)?);
            }
            let mut channels = Vec::with_capacity(sys.channels.len());
            let mut lhat = Vec::with_capacity(sys.channels.len());
            for spec in &sys.channels {
                let n = spec.dim();
                let mut read = |count: usize| -> Result<Vec<f64>> {
                    (0..count).map(|_| f(next()?)).collect()
                };
                let v_hat = read(n)?;
                let theta = (0..=spec.madns).map(|_| read(n)).collect::<Result<Vec<_>>>()?;
                let v_tilde = read(n)?;
                let tau_hat = f(next()?)?;
                let k_bar = u(next()?)?;
                let k_tilde = u(next()?)?;
                let l = u(next()?)? as usize;
                let m_hat = next()?
                    .parse::<i64>()
                    .ok()
                    .and_then(NextAction::from_sign)
                    .ok_or_else(|| bad(ln, "bad m_hat"))?;
                let eta = f(next()?)?;
                lhat.push(u(next()?)? as usize);
                for _ in 0..n {
                    next()?;
                }
                channels.push(ChannelState {
                    v_hat,
                    theta,
                    v_tilde,
                    tau_hat,
                    k_bar,
                    k_tilde,
                    l,
                    m_hat,
                    eta,
                });
            }
            rows.push(TraceRow {
                kind,
                channel,
                state: HybridState { x, channels, t, j },
                lhat,
                g_s,
                pre_l,
                pre_lhat,
            });
        }
        Ok(Trace {
            rows,
            packets: Vec::new(),
        })
    }
}
