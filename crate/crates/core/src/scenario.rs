//! Scenario and channel-plan files.
//!
//! Both are JSON. Every transmittance may be given linearly (`alpha_s`) or
//! in power decibels (`alpha_s_db`), but not both. Unknown fields are
//! rejected and every diagnostic names the offending field path.
//!
//! ```json
//! {
//!   "source":   { "kind": "hps", "mu": 0.11, "alpha_s_db": -6.5, "beta_db": -23.3 },
//!   "channel":  { "alpha_r_db": -20.0, "alpha_d_db": -10.0, "p_noise": 2.7e-5 },
//!   "detector": { "deadtime_s": 10e-6, "pulse_rate_hz": 48.7e6, "gate_width_s": 1e-9 },
//!   "simulation": { "n_slots": 10000000, "seed": 7, "replicas": 1,
//!                   "noise_model": "bernoulli-per-gate",
//!                   "apply_herald_deadtime": false, "hbt_enabled": false },
//!   "plan": "plan.json"
//! }
//! ```
//!
//! A channel plan lists grid channels with optional overrides:
//!
//! ```json
//! { "channels": [
//!     { "index": 11, "p_noise": 3.2e-5 },
//!     { "index": 21, "sfwm_weight": 0.8, "noise_counts_per_s": 40, "clock_rate_hz": 1e6 }
//! ] }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ChannelSpec, DetectorSpec, SourceSpec, Transmittance};
use crate::montecarlo::{NoiseModel, SimConfig};
use crate::wdm::{self, ChannelOverrides, ChannelPlan, LinkInputs, NoiseScanRow, WdmChannel};

fn at(path: &str, e: Error) -> Error {
    let msg = match e {
        Error::InvalidArgument(m)
        | Error::UndefinedConditional(m)
        | Error::Saturation(m)
        | Error::Infeasible(m)
        | Error::CalibrationFailure(m)
        | Error::NumericalFailure(m) => m,
    };
    invalid(format!("{path}: {msg}"))
}

fn transmittance(path: &str, linear: Option<f64>, db: Option<f64>) -> Result<Option<Transmittance>> {
    match (linear, db) {
        (Some(_), Some(_)) => Err(invalid(format!("{path}: give either `{path}` or `{path}_db`, not both"))),
        (Some(v), None) => Transmittance::new(v).map(Some).map_err(|e| at(path, e)),
        (None, Some(db)) => Transmittance::from_db(db).map(Some).map_err(|e| at(&format!("{path}_db"), e)),
        (None, None) => Ok(None),
    }
}

fn required(path: &str, t: Option<Transmittance>) -> Result<Transmittance> {
    t.ok_or_else(|| invalid(format!("{path}: missing (give `{path}` or `{path}_db`)")))
}

fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        invalid(format!("{path}: {}", e.inner()))
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    kind: SourceKind,
    mu: f64,
    alpha_s: Option<f64>,
    alpha_s_db: Option<f64>,
    beta: Option<f64>,
    beta_db: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SourceKind {
    Wcs,
    Hps,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    alpha_r: Option<f64>,
    alpha_r_db: Option<f64>,
    alpha_d: Option<f64>,
    alpha_d_db: Option<f64>,
    p_noise: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    source: RawSource,
    channel: RawChannel,
    detector: DetectorSpec,
    simulation: Option<SimSettings>,
    plan: Option<PathBuf>,
}

/// Simulation block of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub n_slots: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicas: u64,
    #[serde(default)]
    pub noise_model: NoiseModel,
    #[serde(default)]
    pub apply_herald_deadtime: bool,
    #[serde(default)]
    pub hbt_enabled: bool,
    #[serde(default)]
    pub receiver_deadtime: bool,
    #[serde(default)]
    pub hbt_noise: bool,
}

fn one() -> u64 {
    1
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            n_slots: 1_000_000,
            seed: 0,
            replicas: 1,
            noise_model: NoiseModel::default(),
            apply_herald_deadtime: false,
            hbt_enabled: false,
            receiver_deadtime: false,
            hbt_noise: false,
        }
    }
}

/// A validated scenario with all quantities in linear units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub source: SourceSpec,
    pub channel: ChannelSpec,
    pub detector: DetectorSpec,
    pub simulation: Option<SimSettings>,
    /// Channel-plan file, resolved relative to the scenario file.
    pub plan: Option<PathBuf>,
}

/// Numeric scenario fields addressable by `sweep --param`.
pub const SWEEP_PATHS: &[&str] = &[
    "source.mu",
    "source.alpha_s",
    "source.alpha_s_db",
    "source.beta",
    "source.beta_db",
    "channel.alpha_r",
    "channel.alpha_r_db",
    "channel.alpha_d",
    "channel.alpha_d_db",
    "channel.p_noise",
    "detector.deadtime_s",
    "detector.pulse_rate_hz",
    "detector.gate_width_s",
];

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawScenario = parse_json(text)?;
        let s = &raw.source;
        let mu_check = |e| at("source.mu", e);
        let source = match s.kind {
            SourceKind::Wcs => {
                if s.alpha_s.or(s.alpha_s_db).or(s.beta).or(s.beta_db).is_some() {
                    return Err(invalid("source: a WCS source takes no alpha_s/beta"));
                }
                SourceSpec::wcs(s.mu).map_err(mu_check)?
            }
            SourceKind::Hps => SourceSpec::hps(
                s.mu,
                required("source.alpha_s", transmittance("source.alpha_s", s.alpha_s, s.alpha_s_db)?)?,
                required("source.beta", transmittance("source.beta", s.beta, s.beta_db)?)?,
            )
            .map_err(mu_check)?,
        };
        let c = &raw.channel;
        let channel = ChannelSpec::new(
            required("channel.alpha_r", transmittance("channel.alpha_r", c.alpha_r, c.alpha_r_db)?)?,
            required("channel.alpha_d", transmittance("channel.alpha_d", c.alpha_d, c.alpha_d_db)?)?,
            c.p_noise,
        )
        .map_err(|e| at("channel.p_noise", e))?;
        raw.detector.validate().map_err(|e| at("detector", e))?;
        if let Some(sim) = &raw.simulation {
            if sim.n_slots == 0 {
                return Err(invalid("simulation.n_slots: must be >= 1"));
            }
            if sim.replicas == 0 {
                return Err(invalid("simulation.replicas: must be >= 1"));
            }
        }
        Ok(Scenario { source, channel, detector: raw.detector, simulation: raw.simulation, plan: raw.plan })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read scenario {}: {e}", path.display())))?;
        let mut s = Self::from_json(&text).map_err(|e| at(&path.display().to_string(), e))?;
        if let Some(plan) = &s.plan {
            let resolved = match path.parent() {
                Some(dir) if plan.is_relative() => dir.join(plan),
                _ => plan.clone(),
            };
            if !resolved.is_file() {
                return Err(invalid(format!("plan: file {} does not exist", resolved.display())));
            }
            s.plan = Some(resolved);
        }
        Ok(s)
    }

    pub fn link_inputs(&self) -> LinkInputs {
        LinkInputs { source: self.source, channel: self.channel, detector: self.detector }
    }

    /// Simulation configuration from the scenario's simulation block (or
    /// defaults), with optional overrides.
    pub fn sim_config(&self, n_slots: Option<u64>, seed: Option<u64>) -> SimConfig {
        let s = self.simulation.unwrap_or_default();
        SimConfig {
            source: self.source,
            channel: self.channel,
            detector: self.detector,
            n_slots: n_slots.unwrap_or(s.n_slots),
            seed: seed.unwrap_or(s.seed),
            noise_model: s.noise_model,
            apply_herald_deadtime: s.apply_herald_deadtime,
            hbt_enabled: s.hbt_enabled,
            receiver_deadtime: s.receiver_deadtime,
            hbt_noise: s.hbt_noise,
        }
    }

    /// Sets one numeric field by path (see [`SWEEP_PATHS`]); dB paths are
    /// converted to linear values.
    pub fn set_param(&mut self, path: &str, value: f64) -> Result<()> {
        let t = |v: f64| Transmittance::new(v).map_err(|e| at(path, e));
        let tdb = |v: f64| Transmittance::from_db(v).map_err(|e| at(path, e));
        match path {
            "source.mu" => {
                self.source = match self.source {
                    SourceSpec::Wcs { .. } => SourceSpec::wcs(value),
                    SourceSpec::Hps(h) => h.with_mu(value).map(SourceSpec::Hps),
                }
                .map_err(|e| at(path, e))?
            }
            "source.alpha_s" | "source.alpha_s_db" | "source.beta" | "source.beta_db" => {
                let SourceSpec::Hps(h) = &mut self.source else {
                    return Err(invalid(format!("{path}: not defined for a WCS source")));
                };
                let v = if path.ends_with("_db") { tdb(value)? } else { t(value)? };
                if path.starts_with("source.alpha_s") {
                    h.alpha_s = v;
                } else {
                    h.beta = v;
                }
            }
            "channel.alpha_r" => self.channel.alpha_r = t(value)?,
            "channel.alpha_r_db" => self.channel.alpha_r = tdb(value)?,
            "channel.alpha_d" => self.channel.alpha_d = t(value)?,
            "channel.alpha_d_db" => self.channel.alpha_d = tdb(value)?,
            "channel.p_noise" => {
                let c = ChannelSpec { p_noise: value, ..self.channel };
                c.validate().map_err(|e| at(path, e))?;
                self.channel = c;
            }
            "detector.deadtime_s" | "detector.pulse_rate_hz" | "detector.gate_width_s" => {
                let mut d = self.detector;
                match path {
                    "detector.deadtime_s" => d.deadtime_s = value,
                    "detector.pulse_rate_hz" => d.pulse_rate_hz = value,
                    _ => d.gate_width_s = value,
                }
                d.validate().map_err(|e| at(path, e))?;
                self.detector = d;
            }
            _ => {
                return Err(invalid(format!(
                    "unknown parameter path `{path}`; valid paths: {}",
                    SWEEP_PATHS.join(", ")
                )))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    channels: Vec<RawPlanChannel>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlanChannel {
    index: u32,
    center_wavelength_nm: Option<f64>,
    sfwm_weight: Option<f64>,
    alpha_r: Option<f64>,
    alpha_r_db: Option<f64>,
    alpha_d: Option<f64>,
    alpha_d_db: Option<f64>,
    p_noise: Option<f64>,
    noise_counts_per_s: Option<f64>,
    clock_rate_hz: Option<f64>,
}

impl RawPlanChannel {
    fn resolve(&self, i: usize) -> Result<WdmChannel> {
        let p = |f: &str| format!("channels[{i}].{f}");
        let center_wavelength_nm = match self.center_wavelength_nm {
            Some(nm) => nm,
            None => wdm::channel_wavelength(self.index).map_err(|e| at(&p("index"), e))?,
        };
        let p_noise = match (self.p_noise, self.noise_counts_per_s, self.clock_rate_hz) {
            (Some(_), Some(_), _) => {
                return Err(invalid(format!("{}: give p_noise or noise_counts_per_s, not both", p("p_noise"))))
            }
            (Some(v), None, None) => Some(v),
            (None, Some(n), Some(clock)) => Some(
                wdm::p_noise_from_scan(&NoiseScanRow {
                    laser_wavelength_nm: center_wavelength_nm,
                    noise_counts_per_s: n,
                    clock_rate_hz: clock,
                })
                .map_err(|e| at(&p("noise_counts_per_s"), e))?,
            ),
            (None, Some(_), None) => {
                return Err(invalid(format!("{}: required with noise_counts_per_s", p("clock_rate_hz"))))
            }
            (_, None, Some(_)) => {
                return Err(invalid(format!("{}: only valid with noise_counts_per_s", p("clock_rate_hz"))))
            }
            (None, None, None) => None,
        };
        Ok(WdmChannel {
            index: self.index,
            center_wavelength_nm,
            overrides: ChannelOverrides {
                alpha_r: transmittance(&p("alpha_r"), self.alpha_r, self.alpha_r_db)?,
                alpha_d: transmittance(&p("alpha_d"), self.alpha_d, self.alpha_d_db)?,
                p_noise,
            },
            sfwm_weight: self.sfwm_weight.unwrap_or(1.0),
        })
    }
}

pub fn plan_from_json(text: &str) -> Result<ChannelPlan> {
    let raw: RawPlan = parse_json(text)?;
    let channels = raw.channels.iter().enumerate().map(|(i, c)| c.resolve(i)).collect::<Result<Vec<_>>>()?;
    ChannelPlan::new(channels).map_err(|e| at("channels", e))
}

pub fn load_plan(path: &Path) -> Result<ChannelPlan> {
    let text =
        fs::read_to_string(path).map_err(|e| invalid(format!("cannot read plan {}: {e}", path.display())))?;
    plan_from_json(&text).map_err(|e| at(&path.display().to_string(), e))
}
