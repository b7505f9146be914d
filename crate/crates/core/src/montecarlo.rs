//! Seeded time-slot Monte Carlo of heralded and weak coherent photon
//! transmission.
//!
//! Every pump pulse is one slot. Per slot the simulator draws the number of
//! photons (pairs), thins idlers into a threshold herald detector, thins
//! signals through the source, fiber and receiver, adds noise, and applies
//! the two-detector bit-assignment rules of a gated QKD receiver. Optional
//! HBT routing and shifted-window CAR tallies emulate the source
//! characterization measurements.
//!
//! # Random streams
//!
//! Each run uses `ChaCha8Rng::seed_from_u64(derive_seed(seed, run_index))`
//! and consumes 53-bit uniforms (`next_u64() >> 11`) in a fixed order:
//! photon number, idler thinning (stops at the first detected idler),
//! signal thinning, noise, bit assignment of noise photons, HBT routing.
//! Identical configuration and seed give bit-identical [`RunCounts`].

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{self, ChannelSpec, DetectorSpec, Psnr, SourceSpec};

/// Largest mean photon number the Poisson table supports.
pub const MAX_SIM_MU: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// At most one noise photon per gate, present with probability p_noise.
    #[default]
    BernoulliPerGate,
    /// Poisson number of noise photons with P(≥1) = p_noise.
    PoissonPerGate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub source: SourceSpec,
    pub channel: ChannelSpec,
    pub detector: DetectorSpec,
    pub n_slots: u64,
    pub seed: u64,
    #[serde(default)]
    pub noise_model: NoiseModel,
    /// Lock the herald detector for the detector deadtime after each herald.
    #[serde(default)]
    pub apply_herald_deadtime: bool,
    #[serde(default)]
    pub hbt_enabled: bool,
    /// Lock the receiver for the detector deadtime after each registered
    /// detection.
    #[serde(default)]
    pub receiver_deadtime: bool,
    /// Route noise photons into the HBT detectors as well.
    #[serde(default)]
    pub hbt_noise: bool,
}

impl SimConfig {
    pub fn new(source: SourceSpec, channel: ChannelSpec, detector: DetectorSpec, n_slots: u64, seed: u64) -> Self {
        Self {
            source,
            channel,
            detector,
            n_slots,
            seed,
            noise_model: NoiseModel::default(),
            apply_herald_deadtime: false,
            hbt_enabled: false,
            receiver_deadtime: false,
            hbt_noise: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        self.detector.validate()?;
        if self.n_slots == 0 {
            return Err(invalid("n_slots must be >= 1"));
        }
        if self.source.mu() > MAX_SIM_MU {
            return Err(invalid(format!("simulation supports mu <= {MAX_SIM_MU}")));
        }
        Ok(())
    }

    /// Probability that a photon emitted into the signal path is detected.
    pub fn signal_efficiency(&self) -> f64 {
        let source_arm = match &self.source {
            SourceSpec::Hps(h) => h.alpha_s.value(),
            SourceSpec::Wcs { .. } => 1.0,
        };
        source_arm * self.channel.transmittance()
    }
}

/// Raw tallies of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunCounts {
    pub slots: u64,
    /// Herald detector clicks (N_t); zero for a WCS.
    pub heralds: u64,
    /// Slots in which the receiver was gated open.
    pub gated_slots: u64,
    pub signal_detections: u64,
    pub noise_detections: u64,
    /// Gated slots with both a signal and a noise detection.
    pub coincident_detections: u64,
    pub registered_detections: u64,
    pub errors: u64,
    pub hbt_n2: u64,
    pub hbt_n3: u64,
    pub hbt_nc: u64,
    pub car_coincidences: u64,
    pub car_accidentals: u64,
}

impl RunCounts {
    pub fn merge(&mut self, o: &RunCounts) {
        self.slots += o.slots;
        self.heralds += o.heralds;
        self.gated_slots += o.gated_slots;
        self.signal_detections += o.signal_detections;
        self.noise_detections += o.noise_detections;
        self.coincident_detections += o.coincident_detections;
        self.registered_detections += o.registered_detections;
        self.errors += o.errors;
        self.hbt_n2 += o.hbt_n2;
        self.hbt_n3 += o.hbt_n3;
        self.hbt_nc += o.hbt_nc;
        self.car_coincidences += o.car_coincidences;
        self.car_accidentals += o.car_accidentals;
    }

    pub fn pooled<'a>(runs: impl IntoIterator<Item = &'a RunCounts>) -> RunCounts {
        let mut total = RunCounts::default();
        for r in runs {
            total.merge(r);
        }
        total
    }

    pub fn check_invariants(&self) -> Result<()> {
        let ok = self.heralds <= self.slots
            && self.gated_slots <= self.slots
            && self.errors <= self.registered_detections
            && self.hbt_nc <= self.hbt_n2.min(self.hbt_n3)
            && self.registered_detections
                == self.signal_detections + self.noise_detections - self.coincident_detections;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("inconsistent run counts: {self:?}")))
        }
    }
}

/// Mixes a base seed with a run index into an independent stream seed.
pub fn derive_seed(seed: u64, run_index: u64) -> u64 {
    splitmix64(seed ^ run_index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Uniform(ChaCha8Rng);

impl Uniform {
    #[inline]
    fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn bernoulli(&mut self, p: f64) -> bool {
        self.next() < p
    }
}

/// Inverse-CDF Poisson sampler with a precomputed table.
struct PoissonTable {
    cdf: Vec<f64>,
}

impl PoissonTable {
    fn new(mean: f64) -> Self {
        let mut cdf = Vec::new();
        let mut pk = (-mean).exp();
        let mut acc = pk;
        cdf.push(acc);
        let k_max = (mean + 40.0 * mean.sqrt() + 40.0) as usize;
        let mut k = 0;
        while 1.0 - acc > 1e-17 && k < k_max {
            k += 1;
            pk *= mean / k as f64;
            acc += pk;
            cdf.push(acc);
        }
        Self { cdf }
    }

    #[inline]
    fn sample(&self, u: f64) -> u32 {
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len()) as u32
    }
}

/// Runs one simulation.
pub fn simulate(config: &SimConfig) -> Result<RunCounts> {
    config.validate()?;
    Ok(run(config, config.seed))
}

/// Runs `replicas` independent simulations concurrently; replica `i` uses
/// `derive_seed(config.seed, i)`. Results are ordered by replica index.
pub fn simulate_replicas(config: &SimConfig, replicas: u64) -> Result<Vec<RunCounts>> {
    config.validate()?;
    if replicas == 0 {
        return Err(invalid("replicas must be >= 1"));
    }
    Ok((0..replicas)
        .into_par_iter()
        .map(|i| run(config, derive_seed(config.seed, i)))
        .collect())
}

fn run(cfg: &SimConfig, seed: u64) -> RunCounts {
    let mut rng = Uniform(ChaCha8Rng::seed_from_u64(seed));
    let pairs = PoissonTable::new(cfg.source.mu());
    let noise = match cfg.noise_model {
        NoiseModel::BernoulliPerGate => None,
        NoiseModel::PoissonPerGate => Some(PoissonTable::new(-(-cfg.channel.p_noise).ln_1p())),
    };
    let beta = match &cfg.source {
        SourceSpec::Hps(h) => Some(h.beta.value()),
        SourceSpec::Wcs { .. } => None,
    };
    let eta = cfg.signal_efficiency();
    let p_noise = cfg.channel.p_noise;
    let dead_slots = cfg.detector.dead_slots();

    let mut c = RunCounts { slots: cfg.n_slots, ..Default::default() };
    let mut herald_dead = 0u64;
    let mut rx_dead = 0u64;
    let mut prev_herald = false;

    for _ in 0..cfg.n_slots {
        let k = pairs.sample(rng.next());

        let gated = match beta {
            None => true,
            Some(beta) => {
                let mut fired = false;
                if herald_dead > 0 {
                    herald_dead -= 1;
                } else {
                    fired = (0..k).any(|_| rng.bernoulli(beta));
                    if fired && cfg.apply_herald_deadtime {
                        herald_dead = dead_slots;
                    }
                }
                fired
            }
        };

        let survivors = (0..k).filter(|_| rng.bernoulli(eta)).count() as u32;
        let noise_photons = match &noise {
            None => rng.bernoulli(p_noise) as u32,
            Some(table) => table.sample(rng.next()),
        };
        let click = survivors > 0 || noise_photons > 0;

        if beta.is_some() {
            if gated {
                c.heralds += 1;
                if click {
                    c.car_coincidences += 1;
                }
            }
            if prev_herald && click {
                c.car_accidentals += 1;
            }
            prev_herald = gated;
        }

        let rx_alive = rx_dead == 0;
        if !rx_alive {
            rx_dead -= 1;
        }
        if !gated {
            continue;
        }
        c.gated_slots += 1;
        if !rx_alive {
            continue;
        }

        let signal = survivors > 0;
        let noisy = noise_photons > 0;
        if signal {
            c.signal_detections += 1;
        }
        if noisy {
            c.noise_detections += 1;
        }
        if signal && noisy {
            c.coincident_detections += 1;
        }
        if signal || noisy {
            c.registered_detections += 1;
            // Signal photons always reach the detector for the sent bit; each
            // noise photon picks either detector with equal probability. A
            // double click is resolved by a random bit.
            let mut wrong = false;
            let mut right = signal;
            for _ in 0..noise_photons {
                if rng.bernoulli(0.5) {
                    wrong = true;
                } else {
                    right = true;
                }
            }
            let error = match (right, wrong) {
                (_, false) => false,
                (false, true) => true,
                (true, true) => rng.bernoulli(0.5),
            };
            if error {
                c.errors += 1;
            }
            if cfg.receiver_deadtime {
                rx_dead = dead_slots;
            }
        }

        if cfg.hbt_enabled {
            let routed = survivors + if cfg.hbt_noise { noise_photons } else { 0 };
            let (mut d2, mut d3) = (false, false);
            for _ in 0..routed {
                if rng.bernoulli(0.5) {
                    d2 = true;
                } else {
                    d3 = true;
                }
            }
            c.hbt_n2 += d2 as u64;
            c.hbt_n3 += d3 as u64;
            c.hbt_nc += (d2 && d3) as u64;
        }
    }
    c
}

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

/// Estimated link quantities of one run. `None` marks an estimate whose
/// denominator was zero. An unbounded PSNR is reported as infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsEstimate {
    pub p_t: Option<Estimate>,
    pub p_cond: Option<Estimate>,
    pub psnr: Option<Estimate>,
    pub qber: Option<Estimate>,
    pub g2: Option<Estimate>,
    pub car: Option<Estimate>,
    /// Raw observed herald rate, without deadtime correction.
    pub herald_rate_hz: Option<Estimate>,
}

fn proportion(k: u64, n: u64) -> Option<Estimate> {
    (n > 0).then(|| {
        let p = k as f64 / n as f64;
        Estimate { value: p, std_err: (p * (1.0 - p) / n as f64).sqrt() }
    })
}

/// Ratio of two Poisson-like counts with first-order error propagation. A
/// zero numerator is given the standard error of a single count.
fn count_ratio(num: u64, den: u64, scale: f64, extra_rel_var: f64) -> Option<Estimate> {
    (den > 0).then(|| {
        let value = scale * num as f64 / den as f64;
        let std_err = if num == 0 {
            scale / den as f64
        } else {
            value * (1.0 / num as f64 + 1.0 / den as f64 + extra_rel_var).sqrt()
        };
        Estimate { value, std_err }
    })
}

pub fn estimate_metrics(counts: &RunCounts, config: &SimConfig) -> MetricsEstimate {
    let heralded = config.source.is_heralded();
    let f = config.detector.pulse_rate_hz;

    let psnr = if counts.gated_slots == 0 {
        None
    } else if counts.noise_detections == 0 {
        Some(Estimate { value: f64::INFINITY, std_err: 0.0 })
    } else {
        let n = counts.gated_slots as f64;
        let (s, k) = (counts.signal_detections as f64, counts.noise_detections as f64);
        let value = s / k;
        let std_err = if s == 0.0 {
            1.0 / k
        } else {
            value * ((1.0 - s / n) / s + (1.0 - k / n) / k).sqrt()
        };
        Some(Estimate { value, std_err })
    };

    // g2 = N_gated·N_c / (N_2·N_3)
    let g2 = if config.hbt_enabled && counts.hbt_n2 > 0 && counts.hbt_n3 > 0 {
        let scale = counts.gated_slots as f64 / counts.hbt_n3 as f64;
        count_ratio(counts.hbt_nc, counts.hbt_n2, scale, 1.0 / counts.hbt_n3 as f64)
    } else {
        None
    };

    let car = if heralded && counts.car_accidentals > 0 {
        count_ratio(counts.car_coincidences, counts.car_accidentals, 1.0, 0.0)
    } else {
        None
    };

    let p_t = if heralded { proportion(counts.heralds, counts.slots) } else { None };
    MetricsEstimate {
        p_t,
        p_cond: proportion(counts.signal_detections, counts.gated_slots),
        psnr,
        qber: if counts.registered_detections > 0 {
            proportion(counts.errors, counts.registered_detections)
        } else {
            None
        },
        g2,
        car,
        herald_rate_hz: p_t.map(|e| Estimate { value: e.value * f, std_err: e.std_err * f }),
    }
}

/// Expected per-slot herald probability, including dead slots after each
/// herald when enabled.
pub fn expected_herald_prob(config: &SimConfig) -> Result<Option<f64>> {
    if !config.source.is_heralded() {
        return Ok(None);
    }
    let p = model::hps_herald_prob(&config.source)?;
    Ok(Some(if config.apply_herald_deadtime {
        p / (1.0 + p * config.detector.dead_slots() as f64)
    } else {
        p
    }))
}

/// Expected coincidence-to-accidental ratio of the shifted-window estimator
/// for a free-running signal detector.
pub fn expected_car(config: &SimConfig) -> Result<Option<f64>> {
    let h = match &config.source {
        SourceSpec::Hps(h) if h.mu > 0.0 => h,
        _ => return Ok(None),
    };
    let eta = config.signal_efficiency();
    let p_noise = config.channel.p_noise;
    let p_h = -(-h.beta.value() * h.mu).exp_m1();
    let p_hs = model::hps_joint_detection_prob(&config.source, &config.channel)?;
    let p_s = -(-eta * h.mu).exp_m1();
    let p_click = 1.0 - (1.0 - p_s) * (1.0 - p_noise);
    let p_h_click = p_hs + (p_h - p_hs) * p_noise;
    if p_click == 0.0 {
        return Ok(None);
    }
    Ok(Some(p_h_click / (p_h * p_click)))
}

/// One row of a simulation-versus-analytics comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub quantity: &'static str,
    pub estimate: f64,
    pub std_err: f64,
    pub analytic: Option<f64>,
    /// (estimate − analytic) / σ, where σ is the standard error implied by
    /// the analytic value and the run's denominators (falling back to the
    /// estimate's own standard error for g2, CAR and herald rate).
    pub z_score: Option<f64>,
}

fn z(estimate: f64, analytic: f64, sigma: f64) -> f64 {
    if estimate == analytic {
        return 0.0;
    }
    if !(estimate.is_finite() && analytic.is_finite()) {
        return f64::INFINITY;
    }
    let d = estimate - analytic;
    if sigma > 0.0 {
        d / sigma
    } else {
        d.signum() * f64::INFINITY
    }
}

fn binomial_sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Compares every available estimate against the closed-form predictions.
pub fn compare(counts: &RunCounts, config: &SimConfig) -> Result<Vec<Comparison>> {
    let est = estimate_metrics(counts, config);
    let mut rows = Vec::new();
    let mut push = |quantity: &'static str, e: Option<Estimate>, analytic: Option<f64>, sigma: Option<f64>| {
        if let Some(e) = e {
            let z_score = analytic.map(|a| z(e.value, a, sigma.unwrap_or(e.std_err)));
            rows.push(Comparison { quantity, estimate: e.value, std_err: e.std_err, analytic, z_score });
        }
    };

    let herald_prob = expected_herald_prob(config)?;
    push("p_t", est.p_t, herald_prob, herald_prob.map(|p| binomial_sigma(p, counts.slots)));

    let p_qkd = if config.source.mu() > 0.0 || !config.source.is_heralded() {
        Some(model::qkd_detection_prob(&config.source, &config.channel)?)
    } else {
        None
    };
    let p_noise = config.channel.p_noise;
    let rx_exact = !config.receiver_deadtime;
    let p_qkd = p_qkd.filter(|_| rx_exact);
    push("p_cond", est.p_cond, p_qkd, p_qkd.map(|p| binomial_sigma(p, counts.gated_slots)));

    let psnr_analytic = p_qkd.map(|p| model::psnr_from_probs(p, p_noise));
    let psnr_sigma = p_qkd.map(|p| {
        let n = counts.gated_slots as f64;
        let ratio = if p_noise > 0.0 { p / p_noise } else { 0.0 };
        if p > 0.0 && p_noise > 0.0 {
            ratio * ((1.0 - p) / (n * p) + (1.0 - p_noise) / (n * p_noise)).sqrt()
        } else if p_noise > 0.0 {
            1.0 / (n * p_noise)
        } else {
            0.0
        }
    });
    push("psnr", est.psnr, psnr_analytic.map(Psnr::value), psnr_sigma);

    let qber = p_qkd.map(|p| model::qber_exact(p, p_noise)).transpose()?;
    push("qber", est.qber, qber, qber.map(|q| binomial_sigma(q, counts.registered_detections)));

    let g2 = match &config.source {
        SourceSpec::Hps(_) if !config.hbt_noise => Some(model::g2_predicted(&config.source)?),
        _ => None,
    };
    push("g2", est.g2, g2, None);
    push("car", est.car, expected_car(config)?, None);
    push(
        "herald_rate_hz",
        est.herald_rate_hz,
        herald_prob.map(|p| p * config.detector.pulse_rate_hz),
        None,
    );
    Ok(rows)
}

/// Observed herald rate of a simulation with herald deadtime enabled.
pub fn herald_rate_with_deadtime(config: &SimConfig) -> Result<Estimate> {
    config.source.as_hps()?;
    let cfg = SimConfig { apply_herald_deadtime: true, ..*config };
    let counts = simulate(&cfg)?;
    estimate_metrics(&counts, &cfg)
        .herald_rate_hz
        .ok_or_else(|| invalid("no slots simulated"))
}
