//! Recovering source and channel parameters from measurable quantities.
//!
//! The heralding detector's deadtime hides part of the true herald rate;
//! [`beta_mu_from_rate`] undoes that, [`mu_from_g2`] inverts the g²(0)
//! prediction, and [`solve_channel_loss`] inverts the conditional detection
//! probability for the channel transmittance.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{self, DetectorSpec, HpsSource, SourceSpec, Transmittance};

pub const BISECTION_TOLERANCE: f64 = 1e-12;
pub const BISECTION_MAX_ITER: usize = 200;

/// Measured heralding statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredCounts {
    /// Observed heralding rate r.
    pub herald_rate_hz: f64,
    /// Measured heralded g²(0), if available.
    pub g2: Option<f64>,
    pub detector: DetectorSpec,
}

impl MeasuredCounts {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        let r = self.herald_rate_hz;
        if !(r.is_finite() && r >= 0.0) {
            return Err(invalid(format!("herald rate must be >= 0, got {r}")));
        }
        if r * self.detector.deadtime_s >= 1.0 {
            return Err(Error::Saturation(format!(
                "herald rate {r} Hz x deadtime {} s >= 1",
                self.detector.deadtime_s
            )));
        }
        if let Some(g2) = self.g2 {
            check_g2(g2)?;
        }
        Ok(())
    }
}

fn check_g2(g2: f64) -> Result<()> {
    if g2.is_finite() && (0.0..1.0).contains(&g2) {
        Ok(())
    } else {
        Err(invalid(format!("g2 must lie in [0, 1), got {g2}")))
    }
}

/// βμ = r / ((1 − τ_d·r)·F).
pub fn beta_mu_from_rate(m: &MeasuredCounts) -> Result<f64> {
    m.validate()?;
    let r = m.herald_rate_hz;
    Ok(r / ((1.0 - m.detector.deadtime_s * r) * m.detector.pulse_rate_hz))
}

/// Observed herald rate for a given βμ: the forward relation that
/// [`beta_mu_from_rate`] inverts.
pub fn observed_rate_from_beta_mu(beta_mu: f64, detector: &DetectorSpec) -> f64 {
    let true_rate = beta_mu * detector.pulse_rate_hz;
    true_rate / (1.0 + true_rate * detector.deadtime_s)
}

/// Mean pair number from g²(0) and βμ, solving μ² + 2μ − (βμ + g/(1−g)) = 0.
pub fn mu_from_g2(g2: f64, beta_mu: f64) -> Result<f64> {
    check_g2(g2)?;
    if !(beta_mu.is_finite() && beta_mu >= 0.0) {
        return Err(invalid(format!("beta_mu must be >= 0, got {beta_mu}")));
    }
    let x = g2 / (1.0 - g2);
    // −1 + sqrt(1 + s), written to avoid cancellation for small s.
    let s = beta_mu + x;
    Ok(s / (1.0 + (1.0 + s).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationOptions {
    /// Relative disagreement between the rate-based and g²-based μ above
    /// which a warning is attached.
    pub warn_tolerance: f64,
    /// Relative disagreement above which calibration fails.
    pub fail_tolerance: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { warn_tolerance: 0.10, fail_tolerance: 0.50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub source: HpsSource,
    pub beta_mu: f64,
    /// μ = βμ/β from the deadtime-corrected rate.
    pub mu_from_rate: f64,
    pub mu_from_g2: Option<f64>,
    /// |μ_rate − μ_g2| / μ_rate when g²(0) was supplied.
    pub relative_disagreement: Option<f64>,
    pub warning: Option<String>,
}

/// Builds an HPS description from a measured herald rate and known β (and
/// α_s), cross-checking μ against g²(0) when it was measured.
pub fn calibrate_source(
    m: &MeasuredCounts,
    beta: Transmittance,
    alpha_s: Transmittance,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    let beta_mu = beta_mu_from_rate(m)?;
    let mu_rate = beta_mu / beta.value();
    let source = HpsSource::new(mu_rate, alpha_s, beta)?;
    let mut cal = Calibration {
        source,
        beta_mu,
        mu_from_rate: mu_rate,
        mu_from_g2: None,
        relative_disagreement: None,
        warning: None,
    };
    if let Some(g2) = m.g2 {
        let mu_g2 = mu_from_g2(g2, beta_mu)?;
        let rel = if mu_rate > 0.0 {
            (mu_g2 - mu_rate).abs() / mu_rate
        } else if mu_g2 == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        cal.mu_from_g2 = Some(mu_g2);
        cal.relative_disagreement = Some(rel);
        if rel > opts.fail_tolerance {
            return Err(Error::CalibrationFailure(format!(
                "mu from rate ({mu_rate:.6}) and from g2 ({mu_g2:.6}) differ by {:.1}%",
                rel * 100.0
            )));
        }
        if rel > opts.warn_tolerance {
            cal.warning = Some(format!(
                "mu from rate ({mu_rate:.6}) and from g2 ({mu_g2:.6}) differ by {:.1}%",
                rel * 100.0
            ));
        }
    }
    Ok(cal)
}

/// Channel transmittance α_r·α_d reproducing a measured conditional
/// detection probability P_c/P_t, by bisection on (0, 1].
pub fn solve_channel_loss(measured_p_cond: f64, source: &SourceSpec) -> Result<Transmittance> {
    let h = source.as_hps()?;
    if !(measured_p_cond.is_finite() && measured_p_cond > 0.0) {
        return Err(invalid(format!("measured P_c/P_t must be > 0, got {measured_p_cond}")));
    }
    let ceiling = model::heralding_efficiency(source)?;
    if measured_p_cond > ceiling {
        return Err(Error::Infeasible(format!(
            "measured P_c/P_t {measured_p_cond} exceeds heralding efficiency {ceiling}"
        )));
    }
    let forward = |x: f64| -> Result<f64> {
        let ch = model::ChannelSpec::lumped(x, 0.0)?;
        model::hps_conditional_detection(&SourceSpec::Hps(*h), &ch)
    };
    if measured_p_cond == ceiling {
        return Ok(Transmittance::UNITY);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= BISECTION_TOLERANCE {
            return Transmittance::new(mid);
        }
        if forward(mid)? < measured_p_cond {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NumericalFailure(format!(
        "bisection did not converge in {BISECTION_MAX_ITER} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{g2_predicted, ChannelSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn det(deadtime: f64, f: f64) -> DetectorSpec {
        DetectorSpec::new(deadtime, f, 1e-9).unwrap()
    }

    fn counts(r: f64, deadtime: f64, f: f64, g2: Option<f64>) -> MeasuredCounts {
        MeasuredCounts { herald_rate_hz: r, g2, detector: det(deadtime, f) }
    }

    fn reference_source() -> SourceSpec {
        SourceSpec::hps(0.11, Transmittance::from_db(-6.5).unwrap(), Transmittance::from_db(-23.3).unwrap())
            .unwrap()
    }

    #[test]
    fn beta_mu_examples() {
        assert_relative_eq!(beta_mu_from_rate(&counts(1000.0, 0.0, 1e6, None)).unwrap(), 1e-3, max_relative = 1e-14);
        // 2e4 / ((1 − 0.2)·48.7e6)
        let bm = beta_mu_from_rate(&counts(2e4, 10e-6, 48.7e6, None)).unwrap();
        assert_relative_eq!(bm, 2e4 / (0.8 * 48.7e6), max_relative = 1e-14);
        assert!((bm - 5.1335e-4).abs() < 5e-8);
        assert!(matches!(
            beta_mu_from_rate(&counts(100_000.0, 1e-5, 48.7e6, None)),
            Err(Error::Saturation(_))
        ));
        let near = beta_mu_from_rate(&counts(99_999.0, 1e-5, 48.7e6, None)).unwrap();
        assert!(near.is_finite() && near > 1.0);
    }

    #[test]
    fn mu_from_g2_examples() {
        assert_eq!(mu_from_g2(0.0, 0.0).unwrap(), 0.0);
        let mu = mu_from_g2(0.1880, 5.1451e-4).unwrap();
        assert!((mu - 0.110).abs() < 5e-4, "mu {mu}");
        assert_relative_eq!(mu_from_g2(0.5, 0.0).unwrap(), 2f64.sqrt() - 1.0, max_relative = 1e-14);
        assert!(mu_from_g2(1.0, 0.0).is_err());
        assert!(mu_from_g2(0.2, -1e-3).is_err());
    }

    #[test]
    fn mu_from_g2_reproduces_g2() {
        let mu = mu_from_g2(0.1880, 5.1451e-4).unwrap();
        let beta = Transmittance::new(5.1451e-4 / mu).unwrap();
        let g = g2_predicted(&SourceSpec::hps(mu, Transmittance::UNITY, beta).unwrap()).unwrap();
        assert!((g - 0.1880).abs() < 1e-10);
    }

    #[test]
    fn calibrate_source_examples() {
        let beta = Transmittance::from_db(-23.3).unwrap();
        let a_s = Transmittance::from_db(-6.5).unwrap();
        let cal = calibrate_source(&counts(2e4, 10e-6, 48.7e6, None), beta, a_s, &Default::default()).unwrap();
        assert!((cal.source.mu - 0.1098).abs() < 5e-5, "mu {}", cal.source.mu);

        let cal = calibrate_source(&counts(1000.0, 0.0, 1e7, None), Transmittance::UNITY, a_s, &Default::default())
            .unwrap();
        assert_eq!(cal.source.mu, 1000.0 / 1e7);

        // μ from rate ≈ 0.01 but g2 = 0.9 implies μ ≈ 2.2.
        let m = counts(1e-2 * 1e7, 0.0, 1e7, Some(0.9));
        assert!(matches!(
            calibrate_source(&m, Transmittance::UNITY, a_s, &Default::default()),
            Err(Error::CalibrationFailure(_))
        ));
    }

    #[test]
    fn calibrate_source_consistency_levels() {
        let beta = Transmittance::from_db(-23.3).unwrap();
        let a_s = Transmittance::from_db(-6.5).unwrap();
        let ok = calibrate_source(&counts(2e4, 10e-6, 48.7e6, Some(0.188)), beta, a_s, &Default::default()).unwrap();
        assert!(ok.warning.is_none());
        assert!(ok.relative_disagreement.unwrap() < 0.01);
        // g2 = 0.25 gives μ ≈ 0.155, ~41% off.
        let warn = calibrate_source(&counts(2e4, 10e-6, 48.7e6, Some(0.25)), beta, a_s, &Default::default()).unwrap();
        assert!(warn.warning.is_some());
    }

    #[test]
    fn solve_channel_loss_examples() {
        let src = reference_source();
        let eff = model::heralding_efficiency(&src).unwrap();
        assert_eq!(solve_channel_loss(eff, &src).unwrap().value(), 1.0);

        let target = model::hps_conditional_detection(&src, &ChannelSpec::lumped(0.05, 0.0).unwrap()).unwrap();
        assert!((target - 0.012408).abs() < 1e-6, "forward value {target}");
        let x = solve_channel_loss(target, &src).unwrap().value();
        assert!((x - 0.05).abs() < 1e-9);

        assert!(matches!(solve_channel_loss(eff * 1.01, &src), Err(Error::Infeasible(_))));
        assert!(matches!(solve_channel_loss(0.0, &src), Err(Error::InvalidArgument(_))));
        assert!(solve_channel_loss(0.1, &SourceSpec::wcs(0.1).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn g2_roundtrip(mu in 1e-4f64..=0.5, beta in 1e-4f64..=0.1) {
            let src = SourceSpec::hps(mu, Transmittance::UNITY, Transmittance::new(beta).unwrap()).unwrap();
            let g2 = g2_predicted(&src).unwrap();
            let back = mu_from_g2(g2, beta * mu).unwrap();
            prop_assert!((back - mu).abs() <= 1e-9 * mu, "{back} vs {mu}");
        }

        #[test]
        fn rate_inversion_roundtrip(beta_mu in 1e-6f64..1e-2, deadtime in 0.0f64..2e-5) {
            let d = det(deadtime, 48.7e6);
            let r = observed_rate_from_beta_mu(beta_mu, &d);
            let back = beta_mu_from_rate(&MeasuredCounts { herald_rate_hz: r, g2: None, detector: d }).unwrap();
            prop_assert!((back - beta_mu).abs() <= 1e-10 * beta_mu);
        }

        #[test]
        fn channel_loss_roundtrip_and_monotone(x0 in 1e-4f64..=1.0, dx in 1e-3f64..0.5) {
            let src = reference_source();
            let p = |x: f64| model::hps_conditional_detection(&src, &ChannelSpec::lumped(x, 0.0).unwrap()).unwrap();
            let got = solve_channel_loss(p(x0), &src).unwrap().value();
            prop_assert!((got - x0).abs() < 1e-9);
            let x1 = (x0 + dx).min(1.0);
            if x1 > x0 {
                prop_assert!(solve_channel_loss(p(x1), &src).unwrap().value() > got);
            }
        }
    }
}
