//! Closed-form link analytics for weak coherent and heralded photon sources.
//!
//! All probabilities are per pump pulse (time-slot). Threshold detectors are
//! assumed throughout: a detector fires if at least one photon reaches it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Channel transmittance α_r·α_d used when χ is reported without a concrete
/// channel. Deep enough in the lossy regime that χ no longer depends on it.
pub const DEFAULT_CHI_CHANNEL_TRANSMITTANCE: f64 = 1e-3;

/// Converts a power ratio in decibels to a linear ratio.
pub fn db_to_linear(db: f64) -> Result<f64> {
    if !db.is_finite() {
        return Err(invalid(format!("dB value must be finite, got {db}")));
    }
    Ok(10f64.powf(db / 10.0))
}

/// Converts a positive linear power ratio to decibels.
pub fn linear_to_db(linear: f64) -> Result<f64> {
    if !(linear.is_finite() && linear > 0.0) {
        return Err(invalid(format!("linear ratio must be positive and finite, got {linear}")));
    }
    Ok(10.0 * linear.log10())
}

pub fn wavelength_nm_to_frequency_hz(wavelength_nm: f64) -> f64 {
    SPEED_OF_LIGHT / (wavelength_nm * 1e-9)
}

pub fn frequency_hz_to_wavelength_nm(frequency_hz: f64) -> f64 {
    SPEED_OF_LIGHT / frequency_hz * 1e9
}

/// Linear power transmittance in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Transmittance(f64);

impl Transmittance {
    pub const UNITY: Transmittance = Transmittance(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(invalid(format!("transmittance must lie in (0, 1], got {value}")))
        }
    }

    pub fn from_db(db: f64) -> Result<Self> {
        Self::new(db_to_linear(db)?)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn to_db(self) -> f64 {
        10.0 * self.0.log10()
    }
}

impl<'de> Deserialize<'de> for Transmittance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Transmittance::new(v).map_err(serde::de::Error::custom)
    }
}

/// Heralded photon-pair source parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpsSource {
    /// Mean photon-pair number per pump pulse.
    pub mu: f64,
    /// Signal-arm transmittance inside the source.
    pub alpha_s: Transmittance,
    /// Idler-arm transmittance, including the heralding detector efficiency.
    pub beta: Transmittance,
}

impl HpsSource {
    pub fn new(mu: f64, alpha_s: Transmittance, beta: Transmittance) -> Result<Self> {
        check_mu(mu)?;
        Ok(Self { mu, alpha_s, beta })
    }

    pub fn with_mu(self, mu: f64) -> Result<Self> {
        Self::new(mu, self.alpha_s, self.beta)
    }
}

/// A photon source: attenuated laser (WCS) or heralded pair source (HPS).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SourceSpec {
    Wcs { mu: f64 },
    Hps(HpsSource),
}

impl SourceSpec {
    pub fn wcs(mu: f64) -> Result<Self> {
        check_mu(mu)?;
        Ok(SourceSpec::Wcs { mu })
    }

    pub fn hps(mu: f64, alpha_s: Transmittance, beta: Transmittance) -> Result<Self> {
        Ok(SourceSpec::Hps(HpsSource::new(mu, alpha_s, beta)?))
    }

    pub fn mu(&self) -> f64 {
        match self {
            SourceSpec::Wcs { mu } => *mu,
            SourceSpec::Hps(h) => h.mu,
        }
    }

    pub fn is_heralded(&self) -> bool {
        matches!(self, SourceSpec::Hps(_))
    }

    pub fn as_hps(&self) -> Result<&HpsSource> {
        match self {
            SourceSpec::Hps(h) => Ok(h),
            SourceSpec::Wcs { .. } => Err(invalid("operation requires a heralded (HPS) source")),
        }
    }

    /// The weak coherent source with the same mean photon number.
    pub fn wcs_baseline(&self) -> SourceSpec {
        SourceSpec::Wcs { mu: self.mu() }
    }

    pub fn validate(&self) -> Result<()> {
        check_mu(self.mu())
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu.is_finite() && mu >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("mean photon number must be finite and >= 0, got {mu}")))
    }
}

/// One transmission path from source to receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// Fiber channel transmittance.
    pub alpha_r: Transmittance,
    /// Receiver optics transmittance times detector efficiency.
    pub alpha_d: Transmittance,
    /// Probability of a noise-photon detection in one gated slot.
    pub p_noise: f64,
}

impl ChannelSpec {
    pub fn new(alpha_r: Transmittance, alpha_d: Transmittance, p_noise: f64) -> Result<Self> {
        let c = Self { alpha_r, alpha_d, p_noise };
        c.validate()?;
        Ok(c)
    }

    /// A channel with combined transmittance `alpha_rd` lumped into `alpha_r`.
    pub fn lumped(alpha_rd: f64, p_noise: f64) -> Result<Self> {
        Self::new(Transmittance::new(alpha_rd)?, Transmittance::UNITY, p_noise)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_noise.is_finite() && (0.0..1.0).contains(&self.p_noise) {
            Ok(())
        } else {
            Err(invalid(format!("p_noise must lie in [0, 1), got {}", self.p_noise)))
        }
    }

    /// Combined transmittance α_r·α_d.
    pub fn transmittance(&self) -> f64 {
        self.alpha_r.value() * self.alpha_d.value()
    }
}

/// Detector timing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub deadtime_s: f64,
    /// Pump pulse repetition rate F.
    pub pulse_rate_hz: f64,
    /// Informational only.
    pub gate_width_s: f64,
}

impl DetectorSpec {
    pub fn new(deadtime_s: f64, pulse_rate_hz: f64, gate_width_s: f64) -> Result<Self> {
        let d = Self { deadtime_s, pulse_rate_hz, gate_width_s };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_rate_hz.is_finite() && self.pulse_rate_hz > 0.0) {
            return Err(invalid(format!("pulse_rate_hz must be > 0, got {}", self.pulse_rate_hz)));
        }
        if !(self.deadtime_s.is_finite() && self.deadtime_s >= 0.0) {
            return Err(invalid(format!("deadtime_s must be >= 0, got {}", self.deadtime_s)));
        }
        if !(self.gate_width_s.is_finite() && self.gate_width_s > 0.0) {
            return Err(invalid(format!("gate_width_s must be > 0, got {}", self.gate_width_s)));
        }
        Ok(())
    }

    /// Number of whole slots a detector stays dead after firing.
    pub fn dead_slots(&self) -> u64 {
        let x = self.deadtime_s * self.pulse_rate_hz;
        let nearest = x.round();
        // τ_d·F is usually an integer up to rounding noise.
        if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as u64
        } else {
            x.ceil() as u64
        }
    }
}

/// Photon signal-to-noise ratio. Noise-free channels give an unbounded PSNR
/// rather than an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Unbounded,
}

impl Psnr {
    pub fn value(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Psnr::Unbounded)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => match f.precision() {
                Some(p) => write!(f, "{v:.p$}"),
                None => write!(f, "{v}"),
            },
            Psnr::Unbounded => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Unbounded => s.serialize_str("inf"),
        }
    }
}

/// P_s = 1 − exp(−α_r·α_d·μ) for a weak coherent source.
pub fn wcs_detection_prob(source: &SourceSpec, channel: &ChannelSpec) -> Result<f64> {
    match source {
        SourceSpec::Wcs { mu } => Ok(-(-channel.transmittance() * mu).exp_m1()),
        SourceSpec::Hps(_) => Err(invalid("wcs_detection_prob requires a WCS source")),
    }
}

/// Heralding probability P_t = 1 − exp(−β·μ).
pub fn hps_herald_prob(source: &SourceSpec) -> Result<f64> {
    Ok(herald_prob(source.as_hps()?))
}

fn herald_prob(h: &HpsSource) -> f64 {
    -(-h.beta.value() * h.mu).exp_m1()
}

/// Joint probability P_c that the herald fires and the receiver detects a
/// signal photon, for signal-path transmittance `eta` = α_s·α_r·α_d.
///
/// Pairs split into independent Poisson streams by fate (idler detected and
/// signal detected, idler only, signal only), which gives a form free of
/// cancellation for small μ. Algebraically identical to the four-exponential
/// expression.
fn joint_detection_prob(mu: f64, beta: f64, eta: f64) -> f64 {
    let both = -(-eta * beta * mu).exp_m1();
    let idler_only = -(-beta * (1.0 - eta) * mu).exp_m1();
    let signal_only = -(-eta * (1.0 - beta) * mu).exp_m1();
    both + (1.0 - both) * idler_only * signal_only
}

fn conditional_detection(h: &HpsSource, channel_transmittance: f64) -> Result<f64> {
    if h.mu <= 0.0 {
        return Err(Error::UndefinedConditional(
            "herald never fires when mu = 0".to_string(),
        ));
    }
    let eta = h.alpha_s.value() * channel_transmittance;
    let p_t = herald_prob(h);
    let p_c = joint_detection_prob(h.mu, h.beta.value(), eta);
    Ok((p_c / p_t).clamp(0.0, 1.0))
}

/// Probability of a receiver detection conditioned on a herald, P_c/P_t.
pub fn hps_conditional_detection(source: &SourceSpec, channel: &ChannelSpec) -> Result<f64> {
    conditional_detection(source.as_hps()?, channel.transmittance())
}

/// Joint herald-and-detect probability P_c.
pub fn hps_joint_detection_prob(source: &SourceSpec, channel: &ChannelSpec) -> Result<f64> {
    let h = source.as_hps()?;
    Ok(joint_detection_prob(h.mu, h.beta.value(), h.alpha_s.value() * channel.transmittance()))
}

/// Probability that a heralded slot delivers a photon out of the source,
/// i.e. P_c/P_t with a lossless channel and receiver.
pub fn heralding_efficiency(source: &SourceSpec) -> Result<f64> {
    conditional_detection(source.as_hps()?, 1.0)
}

/// Probability of a QKD-photon detection per gated slot: P_s for a WCS,
/// P_c/P_t for an HPS.
pub fn qkd_detection_prob(source: &SourceSpec, channel: &ChannelSpec) -> Result<f64> {
    match source {
        SourceSpec::Wcs { .. } => wcs_detection_prob(source, channel),
        SourceSpec::Hps(_) => hps_conditional_detection(source, channel),
    }
}

/// PSNR = P_QKD / P_noise.
pub fn psnr(source: &SourceSpec, channel: &ChannelSpec) -> Result<Psnr> {
    let p_qkd = qkd_detection_prob(source, channel)?;
    Ok(psnr_from_probs(p_qkd, channel.p_noise))
}

pub fn psnr_from_probs(p_qkd: f64, p_noise: f64) -> Psnr {
    if p_noise == 0.0 {
        Psnr::Unbounded
    } else {
        Psnr::Finite(p_qkd / p_noise)
    }
}

/// PSNR improvement χ = (P_c/P_t)/P_s of an HPS over a WCS with the same μ
/// on the same channel.
pub fn chi_exact(source: &SourceSpec, channel: &ChannelSpec) -> Result<f64> {
    let h = source.as_hps()?;
    let cond = conditional_detection(h, channel.transmittance())?;
    let p_s = wcs_detection_prob(&source.wcs_baseline(), channel)?;
    Ok(cond / p_s)
}

/// χ evaluated at [`DEFAULT_CHI_CHANNEL_TRANSMITTANCE`].
pub fn chi_reported(source: &SourceSpec) -> Result<f64> {
    let channel = ChannelSpec::lumped(DEFAULT_CHI_CHANNEL_TRANSMITTANCE, 0.0)?;
    chi_exact(source, &channel)
}

/// Lossy-channel approximation χ ≈ (α_s/μ)(1 + μ).
pub fn chi_approx(mu: f64, alpha_s: Transmittance) -> Result<f64> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(invalid(format!("chi_approx requires mu > 0, got {mu}")));
    }
    Ok(alpha_s.value() / mu * (1.0 + mu))
}

/// Photon-rate penalty P_c/P_s ≈ α_s·β of heralding (lossless channel).
pub fn rate_penalty(source: &SourceSpec) -> Result<f64> {
    let h = source.as_hps()?;
    Ok(h.alpha_s.value() * h.beta.value())
}

/// Exact P_c/P_s with α_r·α_d = 1.
pub fn rate_penalty_exact(source: &SourceSpec) -> Result<f64> {
    let h = source.as_hps()?;
    if h.mu <= 0.0 {
        return Err(Error::UndefinedConditional("rate penalty undefined at mu = 0".into()));
    }
    let p_c = joint_detection_prob(h.mu, h.beta.value(), h.alpha_s.value());
    let p_s = -(-h.mu).exp_m1();
    Ok(p_c / p_s)
}

/// Error and no-error probabilities per gated slot for a receiver that
/// assigns a random bit when both detectors click. Returns
/// `(p_error, p_noerror)`.
pub fn error_probs(p_qkd: f64, p_noise: f64) -> Result<(f64, f64)> {
    check_prob("p_qkd", p_qkd)?;
    check_prob("p_noise", p_noise)?;
    let p_error = (1.0 - p_qkd) * p_noise / 2.0 + p_qkd * p_noise / 4.0;
    let p_noerror = (1.0 - p_qkd) * p_noise / 2.0 + p_qkd * (1.0 - p_noise / 4.0);
    Ok((p_error, p_noerror))
}

/// QBER = P_error / (P_error + P_noerror); zero when nothing is detected.
pub fn qber_exact(p_qkd: f64, p_noise: f64) -> Result<f64> {
    let (e, ne) = error_probs(p_qkd, p_noise)?;
    if e + ne == 0.0 {
        return Ok(0.0);
    }
    Ok(e / (e + ne))
}

/// Small-P_QKD approximation QBER ≈ 1/(2(1 + PSNR)).
pub fn qber_from_psnr(psnr: Psnr) -> Result<f64> {
    match psnr {
        Psnr::Unbounded => Ok(0.0),
        Psnr::Finite(v) if v.is_finite() && v >= 0.0 => Ok(1.0 / (2.0 * (1.0 + v))),
        Psnr::Finite(v) => Err(invalid(format!("psnr must be >= 0, got {v}"))),
    }
}

/// Approximate heralded g²(0) = (2μ − βμ + μ²)/(1 + 2μ − βμ + μ²).
pub fn g2_predicted(source: &SourceSpec) -> Result<f64> {
    let h = source.as_hps()?;
    Ok(g2_from(h.mu, h.beta.value() * h.mu))
}

pub(crate) fn g2_from(mu: f64, beta_mu: f64) -> f64 {
    let num = 2.0 * mu - beta_mu + mu * mu;
    num / (1.0 + num)
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in [0, 1], got {p}")))
    }
}

/// Derived quantities for one (source, channel) pair. HPS-only fields are
/// `None` for a WCS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkMetrics {
    /// WCS detection probability at the same μ (always present).
    pub p_s: f64,
    pub p_t: Option<f64>,
    pub p_cond: Option<f64>,
    pub heralding_efficiency: Option<f64>,
    /// QKD detection probability per gated slot (P_s or P_c/P_t).
    pub p_qkd: f64,
    pub psnr: Psnr,
    pub qber: f64,
    pub chi: Option<f64>,
    pub rate_penalty: Option<f64>,
}

impl LinkMetrics {
    pub fn evaluate(source: &SourceSpec, channel: &ChannelSpec) -> Result<Self> {
        source.validate()?;
        channel.validate()?;
        let p_s = wcs_detection_prob(&source.wcs_baseline(), channel)?;
        let heralded = match source {
            SourceSpec::Hps(h) if h.mu > 0.0 => Some((
                herald_prob(h),
                hps_conditional_detection(source, channel)?,
                heralding_efficiency(source)?,
                chi_exact(source, channel)?,
                rate_penalty(source)?,
            )),
            _ => None,
        };
        let p_qkd = match (source, heralded) {
            (SourceSpec::Hps(_), Some((_, c, ..))) => c,
            (SourceSpec::Hps(_), None) => 0.0,
            (SourceSpec::Wcs { .. }, _) => p_s,
        };
        let mut m = LinkMetrics {
            p_s,
            p_t: None,
            p_cond: None,
            heralding_efficiency: None,
            p_qkd,
            psnr: psnr_from_probs(p_qkd, channel.p_noise),
            qber: qber_exact(p_qkd, channel.p_noise)?,
            chi: None,
            rate_penalty: None,
        };
        if let SourceSpec::Hps(h) = source {
            m.p_t = Some(herald_prob(h));
            m.rate_penalty = Some(rate_penalty(source)?);
            if let Some((_, cond, eff, chi, _)) = heralded {
                m.p_cond = Some(cond);
                m.heralding_efficiency = Some(eff);
                m.chi = Some(chi);
            }
        }
        Ok(m)
    }

    /// Registered detection probability per slot (gated slots only for an
    /// HPS).
    pub fn detection_prob_per_slot(&self, channel: &ChannelSpec) -> f64 {
        let per_gate = self.p_qkd + (1.0 - self.p_qkd) * channel.p_noise;
        per_gate * self.p_t.unwrap_or(1.0)
    }

    /// Rate of delivered QKD-photon detections per slot: P_c for an HPS, P_s
    /// for a WCS.
    pub fn photon_detection_prob_per_slot(&self) -> f64 {
        match self.p_t {
            Some(p_t) => p_t * self.p_qkd,
            None => self.p_qkd,
        }
    }
}
