//! Link analytics and Monte Carlo simulation for comparing a heralded photon
//! source (HPS) against a weak coherent source (WCS) on a noise-corrupted
//! fiber channel.
//!
//! * [`model`]: closed-form detection probabilities, PSNR, QBER, the PSNR
//!   improvement factor χ, rate penalty and predicted g²(0).
//! * [`calibration`]: recovering βμ, μ and channel transmittance from
//!   measured herald rates, g²(0) and conditional detection probabilities.
//! * [`montecarlo`]: a seeded time-slot simulator that cross-checks the
//!   analytics and emulates HBT, CAR and deadtime measurements.
//! * [`wdm`]: the 64-channel 50 GHz O-band grid, channel plans, noise-scan
//!   ingestion and multi-channel aggregation.
//! * [`scenario`], [`report`] and [`reproduce`]: file formats, output
//!   formatting and the reference presets behind the `heraldsim` tool.

pub mod calibration;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod report;
pub mod reproduce;
pub mod scenario;
pub mod wdm;

pub use error::{Error, Result};
pub use model::{ChannelSpec, DetectorSpec, HpsSource, LinkMetrics, Psnr, SourceSpec, Transmittance};
