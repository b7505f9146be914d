//! Wavelength-multiplexed heralding: the 64-channel, 50 GHz O-band AWG
//! grid, per-channel link parameters, noise-scan ingestion and aggregation
//! of heralded-photon rates across channels.

use std::collections::HashSet;
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{self, ChannelSpec, DetectorSpec, LinkMetrics, SourceSpec, Transmittance};
use crate::montecarlo::{self, SimConfig};

pub const GRID_CHANNELS: u32 = 64;
/// Channel 1 center wavelength.
pub const GRID_ANCHOR_NM: f64 = 1308.2;
pub const GRID_SPACING_HZ: f64 = 50e9;

fn check_index(index: u32) -> Result<()> {
    if (1..=GRID_CHANNELS).contains(&index) {
        Ok(())
    } else {
        Err(invalid(format!("channel index must lie in [1, {GRID_CHANNELS}], got {index}")))
    }
}

pub fn channel_frequency_hz(index: u32) -> Result<f64> {
    check_index(index)?;
    Ok(model::wavelength_nm_to_frequency_hz(GRID_ANCHOR_NM) + f64::from(index - 1) * GRID_SPACING_HZ)
}

/// Center wavelength of a grid channel; frequency rises (wavelength falls)
/// with index.
pub fn channel_wavelength(index: u32) -> Result<f64> {
    Ok(model::frequency_hz_to_wavelength_nm(channel_frequency_hz(index)?))
}

/// Per-channel replacements for fields of the base channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelOverrides {
    pub alpha_r: Option<Transmittance>,
    pub alpha_d: Option<Transmittance>,
    pub p_noise: Option<f64>,
}

impl ChannelOverrides {
    pub fn apply(&self, base: &ChannelSpec) -> Result<ChannelSpec> {
        ChannelSpec::new(
            self.alpha_r.unwrap_or(base.alpha_r),
            self.alpha_d.unwrap_or(base.alpha_d),
            self.p_noise.unwrap_or(base.p_noise),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WdmChannel {
    pub index: u32,
    pub center_wavelength_nm: f64,
    pub overrides: ChannelOverrides,
    /// Pair-generation efficiency relative to the base μ, in (0, 1].
    pub sfwm_weight: f64,
}

impl WdmChannel {
    /// A grid channel with no overrides.
    pub fn on_grid(index: u32) -> Result<Self> {
        Ok(Self {
            index,
            center_wavelength_nm: channel_wavelength(index)?,
            overrides: ChannelOverrides::default(),
            sfwm_weight: 1.0,
        })
    }
}

/// An ordered list of channels with unique indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelPlan {
    channels: Vec<WdmChannel>,
}

impl ChannelPlan {
    /// Validates and sorts the channels by index.
    pub fn new(mut channels: Vec<WdmChannel>) -> Result<Self> {
        if channels.is_empty() {
            return Err(invalid("channel plan is empty"));
        }
        let mut seen = HashSet::new();
        for ch in &channels {
            check_index(ch.index)?;
            if !seen.insert(ch.index) {
                return Err(invalid(format!("duplicate channel index {}", ch.index)));
            }
            if !(ch.sfwm_weight > 0.0 && ch.sfwm_weight <= 1.0) {
                return Err(invalid(format!(
                    "channel {}: sfwm_weight must lie in (0, 1], got {}",
                    ch.index, ch.sfwm_weight
                )));
            }
            if !(ch.center_wavelength_nm.is_finite() && ch.center_wavelength_nm > 0.0) {
                return Err(invalid(format!("channel {}: invalid wavelength", ch.index)));
            }
            if let Some(p) = ch.overrides.p_noise {
                if !(p.is_finite() && (0.0..1.0).contains(&p)) {
                    return Err(invalid(format!("channel {}: p_noise must lie in [0, 1), got {p}", ch.index)));
                }
            }
        }
        channels.sort_by_key(|c| c.index);
        for pair in channels.windows(2) {
            if pair[1].center_wavelength_nm >= pair[0].center_wavelength_nm {
                return Err(invalid(format!(
                    "wavelengths must decrease with index (channel {} at {} nm, channel {} at {} nm)",
                    pair[0].index, pair[0].center_wavelength_nm, pair[1].index, pair[1].center_wavelength_nm
                )));
            }
        }
        Ok(Self { channels })
    }

    /// Identical grid channels `indices` with no overrides.
    pub fn uniform(indices: impl IntoIterator<Item = u32>) -> Result<Self> {
        Self::new(indices.into_iter().map(WdmChannel::on_grid).collect::<Result<_>>()?)
    }

    pub fn channels(&self) -> &[WdmChannel] {
        &self.channels
    }
}

/// One row of a noise-scan file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScanRow {
    pub laser_wavelength_nm: f64,
    pub noise_counts_per_s: f64,
    pub clock_rate_hz: f64,
}

pub const NOISE_SCAN_HEADER: [&str; 3] = ["laser_wavelength_nm", "noise_counts_per_s", "clock_rate_hz"];

/// Noise detection probability per gate opening: counts per second divided
/// by gate openings per second.
pub fn p_noise_from_scan(row: &NoiseScanRow) -> Result<f64> {
    let NoiseScanRow { noise_counts_per_s: n, clock_rate_hz: clock, .. } = *row;
    if !(clock.is_finite() && clock > 0.0) {
        return Err(invalid(format!("clock rate must be > 0, got {clock}")));
    }
    if !(n.is_finite() && n >= 0.0) {
        return Err(invalid(format!("noise counts must be >= 0, got {n}")));
    }
    if n >= clock {
        return Err(invalid(format!("noise counts {n}/s must be below the clock rate {clock} Hz")));
    }
    Ok(n / clock)
}

/// Reads a noise-scan CSV. The header must be exactly
/// `laser_wavelength_nm,noise_counts_per_s,clock_rate_hz`.
pub fn read_noise_scan<R: Read>(reader: R) -> Result<Vec<NoiseScanRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| invalid(format!("noise scan: {e}")))?;
    if header.iter().collect::<Vec<_>>() != NOISE_SCAN_HEADER {
        return Err(invalid(format!(
            "noise scan header must be `{}`, got `{}`",
            NOISE_SCAN_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<NoiseScanRow>().enumerate() {
        let row = rec.map_err(|e| invalid(format!("noise scan row {}: {e}", i + 1)))?;
        p_noise_from_scan(&row).map_err(|e| invalid(format!("noise scan row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Source, channel and detector shared by every channel of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkInputs {
    pub source: SourceSpec,
    pub channel: ChannelSpec,
    pub detector: DetectorSpec,
}

impl LinkInputs {
    /// The inputs of one plan channel: overrides applied and μ scaled by the
    /// channel's SFWM weight.
    pub fn for_channel(&self, ch: &WdmChannel) -> Result<LinkInputs> {
        let mu = self.source.mu() * ch.sfwm_weight;
        let source = match self.source {
            SourceSpec::Wcs { .. } => SourceSpec::wcs(mu)?,
            SourceSpec::Hps(h) => SourceSpec::Hps(h.with_mu(mu)?),
        };
        Ok(LinkInputs { source, channel: ch.overrides.apply(&self.channel)?, detector: self.detector })
    }
}

/// Per-channel result, from either analytics or simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelRow {
    pub channel: u32,
    pub wavelength_nm: f64,
    pub p_t: Option<f64>,
    pub p_cond: Option<f64>,
    /// Infinite when noise-free.
    pub psnr: Option<f64>,
    pub qber: Option<f64>,
    /// Delivered QKD-photon detection rate (P_c·F, or P_s·F for a WCS).
    pub rate_hz: f64,
    /// Registered detection rate, used to weight the mean QBER.
    pub detection_rate_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Totals {
    pub channels: usize,
    pub rate_hz: f64,
    pub detection_rate_hz: f64,
    /// Detection-weighted mean QBER; zero when nothing is detected.
    pub mean_qber: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub rows: Vec<ChannelRow>,
    pub totals: Totals,
}

impl Aggregate {
    fn from_rows(rows: Vec<ChannelRow>) -> Self {
        let rate_hz = rows.iter().map(|r| r.rate_hz).sum();
        let detection_rate_hz: f64 = rows.iter().map(|r| r.detection_rate_hz).sum();
        let weighted: f64 = rows.iter().map(|r| r.detection_rate_hz * r.qber.unwrap_or(0.0)).sum();
        let mean_qber = if detection_rate_hz > 0.0 { weighted / detection_rate_hz } else { 0.0 };
        let totals = Totals { channels: rows.len(), rate_hz, detection_rate_hz, mean_qber };
        Self { rows, totals }
    }
}

/// Closed-form evaluation of every plan channel.
pub fn aggregate(plan: &ChannelPlan, base: &LinkInputs) -> Result<Aggregate> {
    let rows = plan
        .channels()
        .par_iter()
        .map(|ch| {
            let inputs = base.for_channel(ch)?;
            let m = LinkMetrics::evaluate(&inputs.source, &inputs.channel)?;
            let f = inputs.detector.pulse_rate_hz;
            Ok(ChannelRow {
                channel: ch.index,
                wavelength_nm: ch.center_wavelength_nm,
                p_t: m.p_t,
                p_cond: if inputs.source.is_heralded() { m.p_cond } else { Some(m.p_s) },
                psnr: Some(m.psnr.value()),
                qber: Some(m.qber),
                rate_hz: m.photon_detection_prob_per_slot() * f,
                detection_rate_hz: m.detection_prob_per_slot(&inputs.channel) * f,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Aggregate::from_rows(rows))
}

/// Monte Carlo evaluation of every plan channel. Channel `i` runs with seed
/// `derive_seed(base.seed, i)`; `base.source`, `base.channel` and
/// `base.detector` are replaced per channel.
pub fn aggregate_simulated(plan: &ChannelPlan, base: &SimConfig) -> Result<Aggregate> {
    let inputs = LinkInputs { source: base.source, channel: base.channel, detector: base.detector };
    let rows = plan
        .channels()
        .par_iter()
        .map(|ch| {
            let li = inputs.for_channel(ch)?;
            let cfg = SimConfig {
                source: li.source,
                channel: li.channel,
                detector: li.detector,
                seed: montecarlo::derive_seed(base.seed, u64::from(ch.index)),
                ..*base
            };
            let counts = montecarlo::simulate(&cfg)?;
            let est = montecarlo::estimate_metrics(&counts, &cfg);
            let per_slot = |k: u64| k as f64 / counts.slots as f64 * cfg.detector.pulse_rate_hz;
            Ok(ChannelRow {
                channel: ch.index,
                wavelength_nm: ch.center_wavelength_nm,
                p_t: est.p_t.map(|e| e.value),
                p_cond: est.p_cond.map(|e| e.value),
                psnr: est.psnr.map(|e| e.value),
                qber: est.qber.map(|e| e.value),
                rate_hz: per_slot(counts.signal_detections),
                detection_rate_hz: per_slot(counts.registered_detections),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Aggregate::from_rows(rows))
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::InvalidArgument(e.to_string())
    }
}
