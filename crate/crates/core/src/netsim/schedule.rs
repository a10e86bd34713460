//! Sampling schedules and transmission delays.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hybrid::ChannelSpec;

/// Mixes a master seed with stream indices into an independent seed.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = master ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn channel_rng(seed: u64, channel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64 + 1);
    rng
}

/// Pregenerated sampling instants `s_0 = 0 < s_1 < …` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSchedule {
    pub instants: Vec<Vec<f64>>,
    pub horizon: f64,
    pub seed: u64,
}

impl SamplingSchedule {
    /// Draws `τ_j ~ U[T_m, T_M]` until the horizon is covered plus `D + 2`
    /// further samples, so every delay bound is computable.
    ///
    /// `upper` overrides each channel's sampling upper bound.
    pub fn generate(channels: &[ChannelSpec], horizon: f64, seed: u64, upper: Option<&[f64]>) -> Self {
        let instants = channels
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let t_max = upper.map_or(c.t_max, |u| u[i]);
                let mut rng = channel_rng(seed, i);
                let mut s = vec![0.0];
                let mut extra = 0;
                while extra < c.madns + 2 {
                    let tau = if t_max > c.t_min { rng.gen_range(c.t_min..=t_max) } else { c.t_min };
                    let next = s.last().unwrap() + tau;
                    if next > horizon {
                        extra += 1;
                    }
                    s.push(next);
                }
                s
            })
            .collect();
        Self {
            instants,
            horizon,
            seed,
        }
    }

    pub fn tau(&self, channel: usize, j: usize) -> f64 {
        self.instants[channel][j + 1] - self.instants[channel][j]
    }
}

/// Per-channel delay draws `u ~ U[0, 1]`.
#[derive(Debug, Clone)]
pub struct DelayModel {
    pub madns: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
}

impl DelayModel {
    pub fn new(madns: Vec<usize>, seed: u64) -> Self {
        let rngs = (0..madns.len()).map(|i| channel_rng(seed, i)).collect();
        Self { madns, rngs }
    }

    pub fn draw_u(&mut self, channel: usize) -> f64 {
        self.rngs[channel].gen_range(0.0..=1.0)
    }
}

/// Minimal spacing enforced between consecutive arrivals on one channel.
pub const ORDER_EPS: f64 = 1e-9;

/// Arrival time of a packet sent at `s_j`: `s_j + u (s_{j+D+1} − s_j)`,
/// pushed just past the previous arrival if needed.
pub fn draw_delay(
    schedule: &SamplingSchedule,
    channel: usize,
    madns: usize,
    j: usize,
    u: f64,
    prev_arrival: Option<f64>,
) -> Result<f64> {
    let s = &schedule.instants[channel];
    let end = *s.get(j + madns + 1).ok_or(Error::Horizon { channel, index: j })?;
    let start = s[j];
    let mut f = start + u * (end - start);
    if let Some(prev) = prev_arrival {
        f = f.max(prev + ORDER_EPS);
    }
    if f > end {
        return Err(Error::ProtocolViolation {
            channel,
            reason: format!("arrival {f} exceeds the delay bound {end} of sample {j}"),
        });
    }
    Ok(f)
}
