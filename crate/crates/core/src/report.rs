//! Report structures and CSV/table rendering shared by the CLI.
//!
//! Machine formats print every number with Rust's shortest round-trip
//! representation (full precision); missing values are empty fields and an
//! unbounded PSNR prints as `inf`. Human tables round.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::model::{self, ChannelSpec, LinkMetrics, SourceSpec};
use crate::montecarlo::Comparison;
use crate::reproduce::Check;
use crate::wdm::Aggregate;

pub fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Rounded rendering for tables.
pub fn human(x: f64) -> String {
    if x.is_infinite() || x.is_nan() {
        num(x)
    } else if x == 0.0 {
        "0".into()
    } else if x.abs() < 1e-3 || x.abs() >= 1e5 {
        format!("{x:.4e}")
    } else {
        format!("{x:.6}")
    }
}

fn human_opt(x: Option<f64>) -> String {
    x.map(human).unwrap_or_else(|| "-".into())
}

pub fn to_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Left column of labels, then right-aligned value columns.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    table_aligned(header, rows, 1)
}

/// Like [`table`] with the first `left_cols` columns left-aligned.
pub fn table_aligned(header: &[&str], rows: &[Vec<String>], left_cols: usize) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for r in std::iter::once(header.iter().map(|s| s.to_string()).collect::<Vec<_>>()).chain(rows.iter().cloned()) {
        for (i, cell) in r.iter().enumerate().take(cols) {
            width[i] = width[i].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut out = String::new();
        for (i, c) in cells.iter().enumerate().take(cols) {
            if i > 0 {
                out.push_str("  ");
            }
            if i < left_cols {
                out.push_str(&format!("{c:<w$}", w = width[i]));
            } else {
                out.push_str(&format!("{c:>w$}", w = width[i]));
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

/// Link metrics of a scenario next to the WCS with the same μ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeReport {
    pub source: SourceSpec,
    pub channel: ChannelSpec,
    pub metrics: LinkMetrics,
    pub wcs_baseline: LinkMetrics,
    pub chi_approx: Option<f64>,
    pub rate_penalty_db: Option<f64>,
    /// QBER of the scenario source minus QBER of the WCS baseline.
    pub qber_delta: f64,
}

pub const METRICS_COLUMNS: &[&str] = &[
    "source",
    "mu",
    "p_s",
    "p_t",
    "p_cond",
    "heralding_efficiency",
    "psnr",
    "qber",
    "psnr_wcs",
    "qber_wcs",
    "chi",
    "chi_approx",
    "rate_penalty_db",
    "qber_delta",
];

impl AnalyzeReport {
    pub fn new(source: &SourceSpec, channel: &ChannelSpec) -> Result<Self> {
        let metrics = LinkMetrics::evaluate(source, channel)?;
        let wcs_baseline = LinkMetrics::evaluate(&source.wcs_baseline(), channel)?;
        let (chi_approx, rate_penalty_db) = match source {
            SourceSpec::Hps(h) if h.mu > 0.0 => (
                Some(model::chi_approx(h.mu, h.alpha_s)?),
                Some(model::linear_to_db(model::rate_penalty(source)?)?),
            ),
            SourceSpec::Hps(_) => (None, Some(model::linear_to_db(model::rate_penalty(source)?)?)),
            SourceSpec::Wcs { .. } => (None, None),
        };
        Ok(Self {
            source: *source,
            channel: *channel,
            metrics,
            wcs_baseline,
            chi_approx,
            rate_penalty_db,
            qber_delta: metrics.qber - wcs_baseline.qber,
        })
    }

    pub fn kind(&self) -> &'static str {
        if self.source.is_heralded() { "hps" } else { "wcs" }
    }

    pub fn csv_record(&self) -> Vec<String> {
        let m = &self.metrics;
        vec![
            self.kind().to_string(),
            num(self.source.mu()),
            num(m.p_s),
            opt(m.p_t),
            opt(m.p_cond),
            opt(m.heralding_efficiency),
            num(m.psnr.value()),
            num(m.qber),
            num(self.wcs_baseline.psnr.value()),
            num(self.wcs_baseline.qber),
            opt(m.chi),
            opt(self.chi_approx),
            opt(self.rate_penalty_db),
            num(self.qber_delta),
        ]
    }

    pub fn table(&self) -> String {
        let m = &self.metrics;
        let w = &self.wcs_baseline;
        let kind = self.kind().to_uppercase();
        let rows = vec![
            vec!["mu".into(), human(self.source.mu()), human(self.source.mu())],
            vec!["P_t (herald)".into(), human_opt(m.p_t), "-".into()],
            vec!["P_QKD per gate".into(), human(m.p_qkd), human(w.p_qkd)],
            vec!["heralding efficiency".into(), human_opt(m.heralding_efficiency), "-".into()],
            vec!["P_noise".into(), human(self.channel.p_noise), human(self.channel.p_noise)],
            vec!["PSNR".into(), human(m.psnr.value()), human(w.psnr.value())],
            vec!["QBER".into(), human(m.qber), human(w.qber)],
            vec!["chi (exact)".into(), human_opt(m.chi), "-".into()],
            vec!["chi (approx)".into(), human_opt(self.chi_approx), "-".into()],
            vec!["rate penalty (dB)".into(), human_opt(self.rate_penalty_db), "-".into()],
            vec!["QBER delta vs WCS".into(), human(self.qber_delta), "-".into()],
        ];
        table(&["quantity", &kind, "WCS (same mu)"], &rows)
    }
}

pub const COMPARISON_COLUMNS: &[&str] = &["quantity", "estimate", "std_err", "analytic", "z_score"];

pub fn comparison_record(c: &Comparison, label: &str) -> Vec<String> {
    vec![label.to_string(), num(c.estimate), num(c.std_err), opt(c.analytic), opt(c.z_score)]
}

pub fn comparison_table_row(c: &Comparison, label: &str) -> Vec<String> {
    vec![label.to_string(), human(c.estimate), human(c.std_err), human_opt(c.analytic), human_opt(c.z_score)]
}

pub const WDM_COLUMNS: &[&str] = &["channel", "wavelength_nm", "p_t", "p_cond", "psnr", "qber", "rate_hz"];

pub fn wdm_records(agg: &Aggregate) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = agg
        .rows
        .iter()
        .map(|r| {
            vec![
                r.channel.to_string(),
                num(r.wavelength_nm),
                opt(r.p_t),
                opt(r.p_cond),
                opt(r.psnr),
                opt(r.qber),
                num(r.rate_hz),
            ]
        })
        .collect();
    rows.push(vec![
        "total".into(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        num(agg.totals.mean_qber),
        num(agg.totals.rate_hz),
    ]);
    rows
}

pub fn wdm_table(agg: &Aggregate) -> String {
    let mut rows: Vec<Vec<String>> = agg
        .rows
        .iter()
        .map(|r| {
            vec![
                r.channel.to_string(),
                format!("{:.2}", r.wavelength_nm),
                human_opt(r.p_t),
                human_opt(r.p_cond),
                human_opt(r.psnr),
                human_opt(r.qber),
                human(r.rate_hz),
            ]
        })
        .collect();
    rows.push(vec![
        "total".into(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        human(agg.totals.mean_qber),
        human(agg.totals.rate_hz),
    ]);
    table(WDM_COLUMNS, &rows)
}

pub const CHECK_COLUMNS: &[&str] = &["preset", "check", "expected", "computed", "status"];

pub fn check_records(checks: &[Check], full_precision: bool) -> Vec<Vec<String>> {
    checks
        .iter()
        .map(|c| {
            vec![
                c.preset.to_string(),
                c.name.clone(),
                c.expectation.to_string(),
                if full_precision { num(c.computed) } else { human(c.computed) },
                if c.pass { "PASS".into() } else { "FAIL".into() },
            ]
        })
        .collect()
}
