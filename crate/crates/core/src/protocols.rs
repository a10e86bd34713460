//! Scheduling protocols and their storage functions.
//!
//! A protocol decides which node of a channel enters the next packet. The
//! update `h(k, ē)` returns the transmission error that remains after the
//! packet is scheduled; `W(k, e)` is the storage function that contracts
//! under `h`. SD and TOD use the Euclidean norm, so `β̲ = β̄ = 1`,
//! `λ_W = 1` and `M_p = 1`.
//!
//! The Euclidean norm does not contract under round robin (the scheduled
//! node may carry no error), so round robin uses the time-varying weighting
//! `W(k, e)² = Σ_n s_n(k)‖e_n‖²` with `s_n(k) = ((n − k) mod M) + 1`: the
//! node due next has weight one and every other weight drops by one per
//! slot. This gives `λ = √(1 − 1/M)`, `λ_W = β̄ = M_p = √M` and `β̲ = 1`.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Single-device channel: every node transmits, `h = 0`.
    Sd,
    /// Round robin: node `k mod M` transmits.
    RoundRobin,
    /// Try-once-discard: the node with the largest error transmits.
    Tod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub kind: ProtocolKind,
    pub nodes: Vec<Range<usize>>,
    pub lambda: f64,
    pub lambda_w: f64,
    pub m_p: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
}

impl Protocol {
    /// Builds a protocol over nodes of the given sizes.
    ///
    /// `lambda` overrides the default contraction rate, `0` for SD and
    /// `√(1 − 1/M)` for TOD and round robin.
    pub fn new(kind: ProtocolKind, node_sizes: &[usize], lambda: Option<f64>) -> Result<Self> {
        if node_sizes.is_empty() || node_sizes.contains(&0) {
            return Err(Error::Config("protocol nodes must be non-empty".into()));
        }
        let mut nodes = Vec::with_capacity(node_sizes.len());
        let mut start = 0;
        for &s in node_sizes {
            nodes.push(start..start + s);
            start += s;
        }
        let m = node_sizes.len() as f64;
        let lambda = match (kind, lambda) {
            (_, Some(l)) => l,
            (ProtocolKind::Sd, None) => 0.0,
            (ProtocolKind::Tod | ProtocolKind::RoundRobin, None) => (1.0 - 1.0 / m).sqrt(),
        };
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::Config(format!("protocol lambda {lambda} not in [0, 1)")));
        }
        let spread = if kind == ProtocolKind::RoundRobin { m.sqrt() } else { 1.0 };
        Ok(Self {
            kind,
            nodes,
            lambda,
            lambda_w: spread,
            m_p: spread,
            beta_lo: 1.0,
            beta_hi: spread,
        })
    }

    pub fn sd(dim: usize) -> Self {
        Self::new(ProtocolKind::Sd, &[dim], None).expect("valid SD protocol")
    }

    pub fn tod(node_sizes: &[usize]) -> Result<Self> {
        Self::new(ProtocolKind::Tod, node_sizes, None)
    }

    pub fn round_robin(node_sizes: &[usize]) -> Result<Self> {
        Self::new(ProtocolKind::RoundRobin, node_sizes, None)
    }

    pub fn dim(&self) -> usize {
        self.nodes.last().map_or(0, |r| r.end)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Index of the node scheduled for transmission number `k` given `ē`.
    pub fn scheduled_node(&self, k: u64, e_bar: &[f64]) -> Option<usize> {
        match self.kind {
            ProtocolKind::Sd => None,
            ProtocolKind::RoundRobin => Some((k % self.nodes.len() as u64) as usize),
            ProtocolKind::Tod => {
                let mut best = 0;
                let mut best_norm = f64::NEG_INFINITY;
                for (n, r) in self.nodes.iter().enumerate() {
                    let v = norm(&e_bar[r.clone()]);
                    if v > best_norm {
                        best = n;
                        best_norm = v;
                    }
                }
                Some(best)
            }
        }
    }

    /// The protocol update `h(k, ē)`.
    pub fn apply_h(&self, k: u64, e_bar: &[f64]) -> Vec<f64> {
        match self.scheduled_node(k, e_bar) {
            None => vec![0.0; e_bar.len()],
            Some(n) => {
                let mut out = e_bar.to_vec();
                for c in &mut out[self.nodes[n].clone()] {
                    *c = 0.0;
                }
                out
            }
        }
    }

    /// Storage function `W(k, e)`.
    pub fn w(&self, k: u64, e: &[f64]) -> f64 {
        if self.kind != ProtocolKind::RoundRobin {
            return norm(e);
        }
        let m = self.nodes.len() as u64;
        let due = k % m;
        self.nodes
            .iter()
            .enumerate()
            .map(|(n, r)| {
                let s = ((n as u64 + m - due) % m + 1) as f64;
                s * e[r.clone()].iter().map(|v| v * v).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Checks the four storage-function items on random errors.
    pub fn verify_storage(&self, sample_count: usize, rng_seed: u64) -> StorageReport {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let n = self.dim();
        let mut report = StorageReport {
            lambda_emp: 0.0,
            lambda_w_emp: 0.0,
            m_p_emp: 0.0,
            pass: true,
            failures: Vec::new(),
        };
        let fd = 1e-6;
        for _ in 0..sample_count.max(1) {
            let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
            let e: Vec<f64> = (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
            let k: u64 = rng.gen_range(0..1000);
            let w = self.w(k, &e);
            let ne = norm(&e);
            if w < self.beta_lo * ne * (1.0 - 1e-12) || w > self.beta_hi * ne * (1.0 + 1e-12) {
                report.failures.push(format!("item 1 fails at e = {e:?}"));
            }
            if w > 0.0 {
                let contraction = self.w(k + 1, &self.apply_h(k, &e)) / w;
                report.lambda_emp = report.lambda_emp.max(contraction);
                report.lambda_w_emp = report.lambda_w_emp.max(self.w(k + 1, &e) / w);
                let h = fd * scale;
                let grad: Vec<f64> = (0..n)
                    .map(|c| {
                        let mut p = e.clone();
                        let mut m = e.clone();
                        p[c] += h;
                        m[c] -= h;
                        (self.w(k, &p) - self.w(k, &m)) / (2.0 * h)
                    })
                    .collect();
                report.m_p_emp = report.m_p_emp.max(norm(&grad));
            }
        }
        if report.lambda_emp > self.lambda + 1e-9 {
            report.failures.push(format!(
                "item 2: empirical contraction {} exceeds lambda {}",
                report.lambda_emp, self.lambda
            ));
        }
        if report.lambda_w_emp > self.lambda_w + 1e-9 {
            report.failures.push(format!(
                "item 3: empirical growth {} exceeds lambda_w {}",
                report.lambda_w_emp, self.lambda_w
            ));
        }
        if report.m_p_emp > self.m_p + 1e-6 {
            report.failures.push(format!(
                "item 4: empirical gradient bound {} exceeds M_p {}",
                report.m_p_emp, self.m_p
            ));
        }
        report.pass = report.failures.is_empty();
        report
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorageReport {
    pub lambda_emp: f64,
    pub lambda_w_emp: f64,
    pub m_p_emp: f64,
    pub pass: bool,
    pub failures: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest, Strategy};

    #[test]
    fn sd_sends_everything() {
        let p = Protocol::sd(2);
        assert_eq!(p.apply_h(0, &[3.0, -1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn tod_schedules_largest_node() {
        let p = Protocol::tod(&[1, 1]).unwrap();
        assert_eq!(p.apply_h(0, &[3.0, -1.0]), vec![0.0, -1.0]);
        assert_eq!(p.apply_h(5, &[0.5, -2.0]), vec![0.5, 0.0]);
    }

    #[test]
    fn tod_tie_goes_to_first_node() {
        let p = Protocol::tod(&[1, 1]).unwrap();
        assert_eq!(p.apply_h(0, &[2.0, -2.0]), vec![0.0, -2.0]);
    }

    #[test]
    fn round_robin_cycles() {
        let p = Protocol::round_robin(&[1, 1, 1]).unwrap();
        assert_eq!(p.apply_h(0, &[1.0, 2.0, 3.0]), vec![0.0, 2.0, 3.0]);
        assert_eq!(p.apply_h(4, &[1.0, 2.0, 3.0]), vec![1.0, 0.0, 3.0]);
        assert!(Protocol::new(ProtocolKind::RoundRobin, &[1, 1], Some(1.0)).is_err());
    }

    #[test]
    fn round_robin_weights() {
        let p = Protocol::round_robin(&[1, 2]).unwrap();
        // k = 0: node 0 is due (weight 1), node 1 has weight 2.
        assert_relative_eq!(p.w(0, &[1.0, 1.0, 1.0]), 5f64.sqrt());
        assert_relative_eq!(p.w(1, &[1.0, 1.0, 1.0]), 4f64.sqrt());
        // Exact decrement: W(k+1, h)² = W(k, e)² − ‖e‖².
        let e = [0.3, -1.2, 2.0];
        let after = p.w(1, &p.apply_h(0, &e)).powi(2);
        assert_relative_eq!(after, p.w(0, &e).powi(2) - crate::math::norm_sq(&e), epsilon = 1e-12);
    }

    #[test]
    fn w_is_euclidean() {
        let p = Protocol::tod(&[1, 1]).unwrap();
        assert_eq!(p.w(0, &[0.0, 0.0]), 0.0);
        assert_relative_eq!(p.w(0, &[3.0, 4.0]), 5.0);
        let sd = Protocol::sd(1);
        assert_eq!(sd.w(1, &sd.apply_h(0, &[2.5])), sd.lambda * sd.w(0, &[2.5]));
    }

    #[test]
    fn storage_reports() {
        let sd = Protocol::sd(2).verify_storage(2000, 1);
        assert!(sd.pass);
        assert_eq!(sd.lambda_emp, 0.0);

        let tod = Protocol::tod(&[1, 1]).unwrap();
        assert_relative_eq!(tod.lambda, 0.5f64.sqrt());
        let r = tod.verify_storage(5000, 2);
        assert!(r.pass, "{:?}", r.failures);
        assert!(r.lambda_emp <= 0.5f64.sqrt() + 1e-12);
        assert!((r.m_p_emp - 1.0).abs() < 1e-6);

        let rr = Protocol::round_robin(&[1, 1, 1]).unwrap();
        let r = rr.verify_storage(5000, 3);
        assert!(r.pass, "{:?}", r.failures);
        assert!(r.lambda_emp > 0.8, "bound is nearly tight");
        assert!((rr.lambda_w - 3f64.sqrt()).abs() < 1e-15);
    }

    fn node_sizes() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..4, 1..5)
    }

    proptest! {
        #[test]
        fn h_zeroes_exactly_the_scheduled_node(
            sizes in node_sizes(),
            k in 0u64..100,
            seed in any::<u64>(),
            tod in any::<bool>(),
        ) {
            let p = if tod {
                Protocol::tod(&sizes).unwrap()
            } else {
                Protocol::round_robin(&sizes).unwrap()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let h = p.apply_h(k, &e);
            let node = p.scheduled_node(k, &e).unwrap();
            for (n, r) in p.nodes.iter().enumerate() {
                for c in r.clone() {
                    if n == node {
                        prop_assert_eq!(h[c], 0.0);
                    } else {
                        prop_assert_eq!(h[c], e[c]);
                    }
                }
            }
        }

        #[test]
        fn w_is_absolutely_homogeneous(
            e in prop::collection::vec(-10.0f64..10.0, 1..6),
            c in -5.0f64..5.0,
        ) {
            let p = Protocol::sd(e.len());
            let scaled: Vec<f64> = e.iter().map(|x| c * x).collect();
            let lhs = p.w(0, &scaled);
            let rhs = c.abs() * p.w(0, &e);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn tod_contracts_by_node_count(
            m in 1usize..6,
            seed in any::<u64>(),
        ) {
            let p = Protocol::tod(&vec![1; m]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let after = crate::math::norm_sq(&p.apply_h(0, &e));
            let before = crate::math::norm_sq(&e);
            prop_assert!(after <= (1.0 - 1.0 / m as f64) * before + 1e-12);
        }
    }
}
