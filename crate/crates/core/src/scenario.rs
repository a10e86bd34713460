//! JSON configuration and the built-in presets.
//!
//! A configuration names a registered plant, gives per-channel delay budgets
//! and sampling bounds, the certification knobs, the trigger and the
//! simulation setup. [`Config::build`] turns it into a certified, runnable scenario.

use serde::{Deserialize, Serialize};

use crate::certify::{certify_channel, ChannelCertification, SearchOptions};
use crate::error::{Error, Result};
use crate::hybrid::NetworkedSystem;
use crate::monitor::{Certificate, FlowMode};
use crate::netsim::{Disturbance, RecordMode, RunOptions, Scenario, SweepCell, SweepOptions};
use crate::registry::{self, Example1Params, Example2Params};
use crate::storage::{lift_constants, DelayFreeCertificate};
use crate::trigger::{Capability, ChannelTrigger, TriggerParams, TriggerPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub plant: PlantConfig,
    pub channels: Vec<ChannelConfig>,
    pub certificates: CertificateConfig,
    pub trigger: TriggerConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    /// `example1` or `example2`.
    pub name: String,
    /// Plant-specific parameters; missing fields take their defaults.
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub madns: usize,
    pub t_min: f64,
    /// Upper sampling bound; `None` uses the largest certified value.
    #[serde(default)]
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    /// Young split `ε̌` (only used by `example1`).
    #[serde(default = "one")]
    pub eps_check: f64,
    pub lambda_tilde: f64,
    /// One value for every level or one per level `0..=D+1`.
    pub phi0: Vec<f64>,
    #[serde(default)]
    pub search: SearchConfig,
    /// Builds triggers even when the feasibility conditions fail.
    #[serde(default)]
    pub allow_uncertified: bool,
    /// Grid for the `certify` command: every `ε̌ × D` pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub t_lo: f64,
    pub t_hi: f64,
    pub tol: f64,
    pub grid_step: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let s = SearchOptions::default();
        Self {
            t_lo: s.t_lo,
            t_hi: s.t_hi,
            tol: s.tol,
            grid_step: s.grid_step,
        }
    }
}

impl From<SearchConfig> for SearchOptions {
    fn from(s: SearchConfig) -> Self {
        SearchOptions {
            t_lo: s.t_lo,
            t_hi: s.t_hi,
            tol: s.tol,
            grid_step: s.grid_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub eps_check: Vec<f64>,
    pub madns: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerConfig {
    pub profile: Capability,
    pub a: f64,
    pub epsilon: f64,
    pub pi: f64,
}

impl TriggerConfig {
    pub fn params(&self) -> TriggerParams {
        TriggerParams {
            a: self.a,
            epsilon: self.epsilon,
            pi: self.pi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub disturbance: Disturbance,
    pub schedule_seed: u64,
    pub delay_seed: u64,
    pub substep_max: Option<f64>,
    pub strict: bool,
    pub transient: f64,
    /// Ceiling on `U` used by the monitor when a disturbance is active.
    pub u_ceiling: Option<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            x0: Vec::new(),
            disturbance: Disturbance::Zero,
            schedule_seed: 1,
            delay_seed: 2,
            substep_max: None,
            strict: true,
            transient: 1.0,
            u_ceiling: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub trace: bool,
    pub phi: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            trace: true,
            phi: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub runs: usize,
    pub x0_box: Vec<(f64, f64)>,
    pub master_seed: u64,
    /// One cell per value; empty keeps the base configuration.
    #[serde(default)]
    pub eps_check: Vec<f64>,
    /// Profiles compared in every cell; empty keeps the configured one.
    #[serde(default)]
    pub profiles: Vec<Capability>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        registry::check_name(&self.plant.name)?;
        let expected = match self.plant.name.as_str() {
            "example1" => 2,
            _ => 1,
        };
        if self.channels.len() != expected {
            return Err(Error::Config(format!(
                "plant '{}' has {expected} channel(s), config lists {}",
                self.plant.name,
                self.channels.len()
            )));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if !(c.t_min > 0.0) || c.t_max.is_some_and(|t| !(t >= c.t_min)) {
                return Err(Error::Config(format!("channel {i}: need 0 < t_min <= t_max")));
            }
        }
        if self.certificates.phi0.is_empty() || self.certificates.phi0.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Config("phi0 must be a non-empty list of positive values".into()));
        }
        if let Some(g) = &self.certificates.grid {
            if g.eps_check.is_empty() || g.madns.is_empty() {
                return Err(Error::Config("certification grid is empty".into()));
            }
        }
        self.trigger.params().validate()?;
        if !(self.simulation.horizon >= 0.0) {
            return Err(Error::Config("horizon must be non-negative".into()));
        }
        if let Some(s) = &self.sweep {
            if s.runs == 0 {
                return Err(Error::Config("sweep needs at least one run".into()));
            }
        }
        Ok(())
    }

    fn example1_params(&self) -> Result<Example1Params> {
        params_from(&self.plant.params)
    }

    fn example2_params(&self) -> Result<Example2Params> {
        params_from(&self.plant.params)
    }

    /// Delay-free certificate of the configured plant.
    pub fn delay_free_certificate(&self) -> Result<DelayFreeCertificate> {
        match self.plant.name.as_str() {
            "example1" => registry::example1_certificate(self.certificates.eps_check, self.example1_params()?),
            "example2" => registry::example2_certificate(),
            other => Err(Error::Config(format!("unknown plant '{other}'"))),
        }
    }

    /// Certifies every channel; `t_max` overrides are honoured.
    pub fn certify(&self) -> Result<Vec<ChannelCertification>> {
        let cert = self.delay_free_certificate()?;
        cert.validate(self.n_x())?;
        cert.channels
            .iter()
            .zip(&self.channels)
            .map(|(c, ch)| {
                let lifted = lift_constants(c, self.certificates.lambda_tilde, ch.madns)?;
                certify_channel(
                    &lifted,
                    &self.certificates.phi0,
                    ch.t_max,
                    self.trigger.pi,
                    self.certificates.search.into(),
                )
            })
            .collect()
    }

    fn n_x(&self) -> usize {
        2
    }

    /// The networked system with the given sampling upper bounds.
    pub fn system(&self, t_max: &[f64]) -> Result<NetworkedSystem> {
        match self.plant.name.as_str() {
            "example1" => {
                let (c0, c1) = (self.channels[0], self.channels[1]);
                if c0.madns != c1.madns || c0.t_min != c1.t_min || t_max[0] != t_max[1] {
                    let mut sys = registry::example1_system(c0.madns, c0.t_min, t_max[0], self.example1_params()?)?;
                    sys.channels[1].madns = c1.madns;
                    sys.channels[1].t_min = c1.t_min;
                    sys.channels[1].t_max = t_max[1];
                    return NetworkedSystem::new(sys.plant, sys.channels);
                }
                registry::example1_system(c0.madns, c0.t_min, t_max[0], self.example1_params()?)
            }
            "example2" => {
                let c = self.channels[0];
                registry::example2_system(c.madns, c.t_min, t_max[0], self.example2_params()?)
            }
            other => Err(Error::Config(format!("unknown plant '{other}'"))),
        }
    }

    /// Certifies the channels and assembles the runnable scenario.
    pub fn build(&self) -> Result<Built> {
        self.build_with(self.trigger.profile)
    }

    pub fn build_with(&self, profile: Capability) -> Result<Built> {
        let certs = self.certify()?;
        self.assemble(certs, profile)
    }

    /// Assembles a scenario from existing certifications.
    pub fn assemble(&self, certs: Vec<ChannelCertification>, profile: Capability) -> Result<Built> {
        let data = self.delay_free_certificate()?;
        let t_max: Vec<f64> = certs.iter().map(|c| c.t_max).collect();
        let system = self.system(&t_max)?;
        let triggers = certs
            .iter()
            .zip(&data.channels)
            .zip(&self.channels)
            .map(|((cert, d), ch)| {
                ChannelTrigger::new(
                    profile,
                    self.trigger.params(),
                    cert,
                    d,
                    ch.t_min,
                    self.certificates.allow_uncertified,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let policy = TriggerPolicy::new(triggers);
        let sim = &self.simulation;
        let scenario = Scenario {
            system,
            policy: policy.clone(),
            x0: sim.x0.clone(),
            disturbance: sim.disturbance,
            horizon: sim.horizon,
            schedule_seed: sim.schedule_seed,
            delay_seed: sim.delay_seed,
            options: RunOptions {
                substep_max: sim.substep_max,
                record: if self.output.trace { RecordMode::Events } else { RecordMode::None },
                strict: sim.strict,
                transient: sim.transient,
                schedule_t_max: None,
            },
        };
        let monitor = Certificate {
            v: data.v.clone(),
            policy,
        };
        Ok(Built {
            certifications: certs,
            scenario,
            monitor,
        })
    }

    /// Flow check used by the monitor for this configuration.
    pub fn flow_mode(&self, max_u: f64) -> FlowMode {
        if self.simulation.disturbance.is_zero() {
            FlowMode::Decrease
        } else {
            FlowMode::Bounded {
                ceiling: self.simulation.u_ceiling.unwrap_or(max_u),
            }
        }
    }
}

/// One configured cell of a sweep.
#[derive(Debug, Clone)]
pub struct PlannedCell {
    pub eps_check: f64,
    pub profile: Capability,
    pub t_max: Vec<f64>,
    pub cell: SweepCell,
}

impl Config {
    /// Expands the sweep section into cells, certifying once per `ε̌`.
    pub fn sweep_plan(&self) -> Result<(Vec<PlannedCell>, SweepOptions)> {
        let sw = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::Config("configuration has no sweep section".into()))?;
        let eps_list = if sw.eps_check.is_empty() {
            vec![self.certificates.eps_check]
        } else {
            sw.eps_check.clone()
        };
        let profiles = if sw.profiles.is_empty() {
            vec![self.trigger.profile]
        } else {
            sw.profiles.clone()
        };
        let mut cells = Vec::new();
        for &eps in &eps_list {
            let mut cfg = self.clone();
            cfg.certificates.eps_check = eps;
            let certs = cfg.certify()?;
            let t_max: Vec<f64> = certs.iter().map(|c| c.t_max).collect();
            for &profile in &profiles {
                let built = cfg.assemble(certs.clone(), profile)?;
                let sc = built.scenario;
                cells.push(PlannedCell {
                    eps_check: eps,
                    profile,
                    t_max: t_max.clone(),
                    cell: SweepCell {
                        label: format!("eps_check={eps} profile={}", profile_name(profile)),
                        system: sc.system,
                        policy: sc.policy,
                        disturbance: sc.disturbance,
                        horizon: sc.horizon,
                        options: sc.options,
                    },
                });
            }
        }
        let opts = SweepOptions {
            runs: sw.runs,
            x0_box: sw.x0_box.clone(),
            master_seed: sw.master_seed,
            jobs: None,
        };
        Ok((cells, opts))
    }
}

/// One `(ε̌, D)` cell of a certification grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub eps_check: f64,
    pub madns: usize,
    /// Largest certified `T_M` per channel; `None` when no value is feasible.
    pub t_max: Vec<Option<f64>>,
}

impl Config {
    /// Searches the largest `T_M` on every cell of the `grid` section.
    pub fn certify_grid(&self) -> Result<Vec<GridCell>> {
        let grid = self
            .certificates
            .grid
            .as_ref()
            .ok_or_else(|| Error::Config("configuration has no certificates.grid section".into()))?;
        let mut cells = Vec::new();
        for &eps in &grid.eps_check {
            for &d in &grid.madns {
                let mut cell = self.clone();
                cell.certificates.eps_check = eps;
                cell.certificates.grid = None;
                for ch in cell.channels.iter_mut() {
                    ch.madns = d;
                    ch.t_max = None;
                }
                let t_max = match cell.certify() {
                    Ok(certs) => certs.iter().map(|c| c.max_t_max).collect(),
                    Err(e) if e.is_certification() => vec![None; self.channels.len()],
                    Err(e) => return Err(e),
                };
                cells.push(GridCell {
                    eps_check: eps,
                    madns: d,
                    t_max,
                });
            }
        }
        Ok(cells)
    }
}

pub fn profile_name(p: Capability) -> &'static str {
    match p {
        Capability::FullInfo => "full",
        Capability::NoOde => "no_ode",
        Capability::NoAck => "no_ack",
        Capability::Static => "static",
    }
}

fn params_from<T: serde::de::DeserializeOwned + Default>(v: &serde_json::Value) -> Result<T> {
    if v.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("plant params: {e}")))
}

/// A certified scenario ready to run and monitor.
#[derive(Debug, Clone)]
pub struct Built {
    pub certifications: Vec<ChannelCertification>,
    pub scenario: Scenario,
    pub monitor: Certificate,
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 5] = ["example1", "example2", "table2", "table3", "sabotage"];

/// Two scalar channels, `D = 1`, `ε̌ = 0.5`, `w = 2 sin(20πt)`.
pub fn example1() -> Config {
    Config {
        plant: PlantConfig {
            name: "example1".into(),
            params: serde_json::Value::Null,
        },
        channels: vec![
            ChannelConfig {
                madns: 1,
                t_min: 0.002,
                t_max: None,
            };
            2
        ],
        certificates: CertificateConfig {
            eps_check: 0.5,
            lambda_tilde: 0.5,
            phi0: vec![10.0],
            search: SearchConfig::default(),
            allow_uncertified: false,
            grid: None,
        },
        trigger: TriggerConfig {
            profile: Capability::FullInfo,
            a: 0.01,
            epsilon: 0.5,
            pi: 0.99,
        },
        simulation: SimulationConfig {
            horizon: 10.0,
            x0: vec![10.0, -10.0],
            disturbance: Disturbance::Sine {
                amplitude: 2.0,
                frequency: 10.0,
            },
            ..SimulationConfig::default()
        },
        output: OutputConfig::default(),
        sweep: None,
    }
}

/// Robot arm over one try-once-discard channel, `D = 1`, no disturbance.
pub fn example2() -> Config {
    Config {
        plant: PlantConfig {
            name: "example2".into(),
            params: serde_json::Value::Null,
        },
        channels: vec![ChannelConfig {
            madns: 1,
            t_min: 0.0005,
            t_max: Some(0.0016),
        }],
        certificates: CertificateConfig {
            eps_check: 1.0,
            lambda_tilde: 0.8,
            phi0: vec![1.2],
            search: SearchConfig::default(),
            allow_uncertified: false,
            grid: None,
        },
        trigger: TriggerConfig {
            profile: Capability::FullInfo,
            a: 0.01,
            epsilon: 0.3,
            pi: 0.99,
        },
        simulation: SimulationConfig {
            horizon: 10.0,
            x0: vec![-1.3, 2.0],
            disturbance: Disturbance::Zero,
            ..SimulationConfig::default()
        },
        output: OutputConfig::default(),
        sweep: None,
    }
}

/// Example 2 with the sampling bound tripled beyond certification.
pub fn sabotage() -> Config {
    let mut c = example2();
    c.channels[0].t_max = Some(0.0048);
    c.certificates.allow_uncertified = true;
    c.simulation.strict = false;
    c
}

/// The `ε̌ × D` MASP grid of Example 1.
pub fn table2() -> Config {
    let mut c = example1();
    c.certificates.grid = Some(GridConfig {
        eps_check: vec![1.0, 0.5, 0.1, 0.01],
        madns: vec![0, 1, 2, 3],
    });
    c
}

/// AIET of Example 1 across `ε̌`, 50 runs per cell.
pub fn table3() -> Config {
    let mut c = example1();
    c.output.trace = false;
    c.sweep = Some(SweepConfig {
        runs: 50,
        x0_box: vec![(-10.0, 10.0), (-10.0, 10.0)],
        master_seed: 2024,
        eps_check: vec![1.0, 0.5, 0.1, 0.01],
        profiles: vec![Capability::FullInfo, Capability::Static],
    });
    c
}

pub fn preset(name: &str) -> Result<Config> {
    match name {
        "example1" | "1" => Ok(example1()),
        "example2" | "2" => Ok(example2()),
        "table2" => Ok(table2()),
        "table3" => Ok(table3()),
        "sabotage" => Ok(sabotage()),
        other => Err(Error::Config(format!("unknown preset '{other}', expected one of {PRESETS:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(Config::from_json(&c.to_json()).unwrap(), c);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&example2().to_json()).unwrap();
        v["trigger"]["bogus"] = serde_json::json!(1);
        assert!(matches!(Config::from_json(&v.to_string()), Err(Error::Config(_))));
        let mut v: serde_json::Value = serde_json::from_str(&example1().to_json()).unwrap();
        v["plant"]["params"] = serde_json::json!({"kappa": 2.0, "typo": 1});
        let c = Config::from_json(&v.to_string()).unwrap();
        assert!(c.certify().is_err());
    }

    #[test]
    fn cross_references_are_checked() {
        let mut c = example2();
        c.plant.name = "example3".into();
        assert!(c.validate().is_err());
        let mut c = example1();
        c.channels.pop();
        assert!(c.validate().is_err());
        let mut c = table2();
        c.certificates.grid.as_mut().unwrap().madns.clear();
        assert!(c.validate().is_err());
    }
}
