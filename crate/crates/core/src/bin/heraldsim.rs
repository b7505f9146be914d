use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use heraldsim::calibration::{self, CalibrationOptions, MeasuredCounts};
use heraldsim::model::{DetectorSpec, Transmittance};
use heraldsim::montecarlo::{self, Comparison, RunCounts};
use heraldsim::report::{self, AnalyzeReport};
use heraldsim::reproduce::{self, Preset};
use heraldsim::scenario::{self, Scenario};
use heraldsim::wdm::{self, NoiseScanRow};

#[derive(Parser)]
#[command(name = "heraldsim", version, about = "Heralded vs. weak coherent source link analytics and Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct OutputArgs {
    /// Output format. Defaults to a table on stdout, or to CSV (JSON for a
    /// `.json` path) with --out.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write the report to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form link metrics next to the same-μ WCS baseline.
    Analyze {
        scenario: PathBuf,
        /// Noise-scan CSV; one report row per scanned wavelength.
        #[arg(long)]
        noise_scan: Option<PathBuf>,
    },
    /// Monte Carlo run(s) compared against the closed forms.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        replicas: Option<u64>,
    },
    /// Evaluate the scenario over a grid of one parameter.
    Sweep {
        scenario: PathBuf,
        /// Scenario field to vary, e.g. `channel.p_noise` or `source.beta_db`.
        #[arg(long)]
        param: String,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, allow_negative_numbers = true)]
        to: f64,
        #[arg(long)]
        steps: usize,
        /// Geometric instead of linear spacing.
        #[arg(long)]
        log: bool,
        /// Add simulated estimates at every grid point.
        #[arg(long)]
        simulate: bool,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Infer βμ and μ from a measured herald rate (and optionally g²(0)).
    Infer {
        /// Observed herald rate (Hz).
        #[arg(long)]
        rate: f64,
        /// Herald detector deadtime (s).
        #[arg(long)]
        deadtime: f64,
        /// Pump pulse rate (Hz).
        #[arg(long)]
        pulse_rate: Option<f64>,
        /// Measured heralded g²(0).
        #[arg(long)]
        g2: Option<f64>,
        /// Idler-arm transmittance β in dB.
        #[arg(long, allow_negative_numbers = true)]
        beta_db: Option<f64>,
    },
    /// Run a built-in reference preset and its pass/fail checks.
    Reproduce {
        /// fig7, chi-table, appendixB or grid.
        preset: String,
    },
    /// Per-channel metrics of a WDM channel plan plus totals.
    Wdm {
        plan: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        simulate: bool,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Args)]
struct SimArgs {
    /// Number of time slots per run.
    #[arg(long)]
    slots: Option<u64>,
    /// Base seed (default: HERALDSIM_SEED, then the scenario's seed, then 0).
    #[arg(long, env = "HERALDSIM_SEED")]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

struct Output {
    format: Format,
    path: Option<PathBuf>,
}

impl Output {
    fn new(args: OutputArgs, default: Format) -> Self {
        let format = args.format.unwrap_or(match &args.out {
            Some(p) if p.extension().is_some_and(|e| e == "json") => Format::Json,
            Some(_) => Format::Csv,
            None => default,
        });
        Self { format, path: args.out }
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.path {
            Some(p) => {
                let mut f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
                f.write_all(text.as_bytes())?;
            }
            None => io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let default = match cli.command {
        Command::Sweep { .. } => Format::Csv,
        _ => Format::Table,
    };
    let out = Output::new(cli.output, default);
    match cli.command {
        Command::Analyze { scenario, noise_scan } => analyze(&out, &scenario, noise_scan.as_deref()),
        Command::Simulate { scenario, sim, replicas } => simulate(&out, &scenario, &sim, replicas),
        Command::Sweep { scenario, param, from, to, steps, log, simulate, sim } => {
            sweep(&out, &scenario, &param, grid(from, to, steps, log)?, simulate.then_some(&sim))
        }
        Command::Infer { rate, deadtime, pulse_rate, g2, beta_db } => infer(&out, rate, deadtime, pulse_rate, g2, beta_db),
        Command::Reproduce { preset } => reproduce(&out, &preset),
        Command::Wdm { plan, scenario, simulate, sim } => wdm_cmd(&out, &plan, &scenario, simulate.then_some(&sim)),
    }
}

fn analyze(out: &Output, path: &Path, noise_scan: Option<&Path>) -> Result<ExitCode> {
    let sc = Scenario::load(path)?;
    let Some(scan_path) = noise_scan else {
        let r = AnalyzeReport::new(&sc.source, &sc.channel)?;
        out.emit(&match out.format {
            Format::Table => r.table(),
            Format::Csv => report::to_csv(report::METRICS_COLUMNS, &[r.csv_record()])?,
            Format::Json => report::to_json(&r)?,
        })?;
        return Ok(ExitCode::SUCCESS);
    };

    let file = File::open(scan_path).with_context(|| format!("cannot open {}", scan_path.display()))?;
    let scan = wdm::read_noise_scan(file).with_context(|| format!("noise scan {}", scan_path.display()))?;

    #[derive(Serialize)]
    struct ScanReport {
        scan: NoiseScanRow,
        p_noise: f64,
        report: AnalyzeReport,
    }
    let rows = scan
        .iter()
        .map(|row| {
            let p_noise = wdm::p_noise_from_scan(row)?;
            let mut s = sc.clone();
            s.set_param("channel.p_noise", p_noise)?;
            Ok(ScanReport { scan: *row, p_noise, report: AnalyzeReport::new(&s.source, &s.channel)? })
        })
        .collect::<heraldsim::Result<Vec<_>>>()?;

    let mut header = vec!["laser_wavelength_nm", "noise_counts_per_s", "p_noise"];
    header.extend_from_slice(report::METRICS_COLUMNS);
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut rec = vec![
                report::num(r.scan.laser_wavelength_nm),
                report::num(r.scan.noise_counts_per_s),
                report::num(r.p_noise),
            ];
            rec.extend(r.report.csv_record());
            rec
        })
        .collect();
    out.emit(&match out.format {
        Format::Table => {
            let header = ["laser_nm", "p_noise", "psnr", "qber", "psnr_wcs", "qber_wcs"];
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let m = &r.report;
                    vec![
                        format!("{:.2}", r.scan.laser_wavelength_nm),
                        report::human(r.p_noise),
                        report::human(m.metrics.psnr.value()),
                        report::human(m.metrics.qber),
                        report::human(m.wcs_baseline.psnr.value()),
                        report::human(m.wcs_baseline.qber),
                    ]
                })
                .collect();
            report::table(&header, &rows)
        }
        Format::Csv => report::to_csv(&header, &records)?,
        Format::Json => report::to_json(&rows)?,
    })?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SimulationReport {
    slots_per_replica: u64,
    replicas: u64,
    seed: u64,
    pooled: Vec<Comparison>,
    per_replica: Vec<Vec<Comparison>>,
}

fn run_simulation(sc: &Scenario, sim: &SimArgs, replicas: Option<u64>) -> Result<SimulationReport> {
    let config = sc.sim_config(sim.slots, sim.seed);
    let replicas = replicas.unwrap_or(sc.simulation.unwrap_or_default().replicas);
    if replicas == 0 {
        bail!("--replicas must be >= 1");
    }
    let runs = montecarlo::simulate_replicas(&config, replicas)?;
    let pooled = montecarlo::compare(&RunCounts::pooled(&runs), &config)?;
    let per_replica = if replicas > 1 {
        runs.iter().map(|c| montecarlo::compare(c, &config)).collect::<heraldsim::Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(SimulationReport { slots_per_replica: config.n_slots, replicas, seed: config.seed, pooled, per_replica })
}

fn simulate(out: &Output, path: &Path, sim: &SimArgs, replicas: Option<u64>) -> Result<ExitCode> {
    let sc = Scenario::load(path)?;
    let r = run_simulation(&sc, sim, replicas)?;
    let labelled = || {
        let pooled = r.pooled.iter().map(|c| (c.quantity.to_string(), c));
        let each = r
            .per_replica
            .iter()
            .enumerate()
            .flat_map(|(i, rows)| rows.iter().map(move |c| (format!("{}#{}", c.quantity, i + 1), c)));
        pooled.chain(each)
    };
    out.emit(&match out.format {
        Format::Table => {
            let rows: Vec<_> = labelled().map(|(l, c)| report::comparison_table_row(c, &l)).collect();
            format!(
                "{} replica(s) x {} slots, seed {}\n\n{}",
                r.replicas,
                r.slots_per_replica,
                r.seed,
                report::table(report::COMPARISON_COLUMNS, &rows)
            )
        }
        Format::Csv => {
            let rows: Vec<_> = labelled().map(|(l, c)| report::comparison_record(c, &l)).collect();
            report::to_csv(report::COMPARISON_COLUMNS, &rows)?
        }
        Format::Json => report::to_json(&r)?,
    })?;
    Ok(ExitCode::SUCCESS)
}

fn grid(from: f64, to: f64, steps: usize, log: bool) -> Result<Vec<f64>> {
    if steps == 0 {
        bail!("--steps must be >= 1");
    }
    if !(from.is_finite() && to.is_finite()) {
        bail!("--from and --to must be finite");
    }
    if log && !(from > 0.0 && to > 0.0) {
        bail!("--log needs positive --from and --to");
    }
    let last = (steps - 1).max(1) as f64;
    Ok((0..steps)
        .map(|i| {
            let t = i as f64 / last;
            if i + 1 == steps && steps > 1 {
                to
            } else if log {
                from * (to / from).powf(t)
            } else {
                from + (to - from) * t
            }
        })
        .collect())
}

const SIM_QUANTITIES: [&str; 4] = ["p_t", "p_cond", "psnr", "qber"];

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    analytic: AnalyzeReport,
    simulated: Option<Vec<Comparison>>,
}

fn sweep(out: &Output, path: &Path, param: &str, values: Vec<f64>, sim: Option<&SimArgs>) -> Result<ExitCode> {
    let sc = Scenario::load(path)?;
    if !scenario::SWEEP_PATHS.contains(&param) {
        bail!("unknown parameter path `{param}`; valid paths: {}", scenario::SWEEP_PATHS.join(", "));
    }
    let rows = values
        .par_iter()
        .enumerate()
        .map(|(i, &value)| -> Result<SweepRow> {
            let mut s = sc.clone();
            s.set_param(param, value)?;
            let analytic = AnalyzeReport::new(&s.source, &s.channel)?;
            let simulated = match sim {
                Some(a) => {
                    let mut cfg = s.sim_config(a.slots, a.seed);
                    cfg.seed = montecarlo::derive_seed(cfg.seed, i as u64);
                    Some(montecarlo::compare(&montecarlo::simulate(&cfg)?, &cfg)?)
                }
                None => None,
            };
            Ok(SweepRow { value, analytic, simulated })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut header = vec!["param".to_string(), "value".to_string()];
    header.extend(report::METRICS_COLUMNS.iter().map(|s| s.to_string()));
    if sim.is_some() {
        for q in SIM_QUANTITIES {
            header.extend([format!("sim_{q}"), format!("sim_{q}_se"), format!("sim_{q}_z")]);
        }
    }
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut rec = vec![param.to_string(), report::num(r.value)];
            rec.extend(r.analytic.csv_record());
            if let Some(sim) = &r.simulated {
                for q in SIM_QUANTITIES {
                    match sim.iter().find(|c| c.quantity == q) {
                        Some(c) => rec.extend([report::num(c.estimate), report::num(c.std_err), report::opt(c.z_score)]),
                        None => rec.extend([String::new(), String::new(), String::new()]),
                    }
                }
            }
            rec
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.emit(&match out.format {
        Format::Csv => report::to_csv(&header, &records)?,
        Format::Json => report::to_json(&rows)?,
        Format::Table => {
            let cols = ["value", "psnr", "qber", "psnr_wcs", "qber_wcs", "chi"];
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let a = &r.analytic;
                    vec![
                        report::human(r.value),
                        report::human(a.metrics.psnr.value()),
                        report::human(a.metrics.qber),
                        report::human(a.wcs_baseline.psnr.value()),
                        report::human(a.wcs_baseline.qber),
                        a.metrics.chi.map(report::human).unwrap_or_else(|| "-".into()),
                    ]
                })
                .collect();
            format!("sweep over {param}\n\n{}", report::table(&cols, &rows))
        }
    })?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct InferReport {
    herald_rate_hz: f64,
    deadtime_s: f64,
    pulse_rate_hz: f64,
    corrected_rate_hz: f64,
    beta_mu: f64,
    beta: Option<f64>,
    mu_from_rate: Option<f64>,
    g2: Option<f64>,
    mu_from_g2: Option<f64>,
    relative_disagreement: Option<f64>,
    consistency: Option<&'static str>,
    warning: Option<String>,
}

fn infer(
    out: &Output,
    rate: f64,
    deadtime: f64,
    pulse_rate: Option<f64>,
    g2: Option<f64>,
    beta_db: Option<f64>,
) -> Result<ExitCode> {
    if !(rate.is_finite() && rate >= 0.0) || !(deadtime.is_finite() && deadtime >= 0.0) {
        bail!("--rate and --deadtime must be finite and >= 0");
    }
    if rate * deadtime >= 1.0 {
        return Err(heraldsim::Error::Saturation(format!(
            "herald rate {rate} Hz x deadtime {deadtime} s >= 1; the detector is saturated"
        ))
        .into());
    }
    let pulse_rate = pulse_rate.ok_or_else(|| anyhow!("--pulse-rate is required to infer beta*mu"))?;
    let m = MeasuredCounts { herald_rate_hz: rate, g2, detector: DetectorSpec::new(deadtime, pulse_rate, 1.0 / pulse_rate)? };
    let beta_mu = calibration::beta_mu_from_rate(&m)?;
    let mut r = InferReport {
        herald_rate_hz: rate,
        deadtime_s: deadtime,
        pulse_rate_hz: pulse_rate,
        corrected_rate_hz: rate / (1.0 - rate * deadtime),
        beta_mu,
        beta: None,
        mu_from_rate: None,
        g2,
        mu_from_g2: None,
        relative_disagreement: None,
        consistency: None,
        warning: None,
    };
    match beta_db {
        Some(db) => {
            let beta = Transmittance::from_db(db)?;
            // α_s does not enter μ; unity keeps the source description valid.
            let cal = calibration::calibrate_source(&m, beta, Transmittance::UNITY, &CalibrationOptions::default())?;
            r.beta = Some(beta.value());
            r.mu_from_rate = Some(cal.mu_from_rate);
            r.mu_from_g2 = cal.mu_from_g2;
            r.relative_disagreement = cal.relative_disagreement;
            r.consistency = cal.relative_disagreement.map(|_| if cal.warning.is_some() { "warn" } else { "ok" });
            r.warning = cal.warning;
        }
        None => r.mu_from_g2 = g2.map(|g| calibration::mu_from_g2(g, beta_mu)).transpose()?,
    }

    let fields: Vec<(&str, Option<f64>)> = vec![
        ("herald_rate_hz", Some(r.herald_rate_hz)),
        ("corrected_rate_hz", Some(r.corrected_rate_hz)),
        ("beta_mu", Some(r.beta_mu)),
        ("beta", r.beta),
        ("mu_from_rate", r.mu_from_rate),
        ("g2", r.g2),
        ("mu_from_g2", r.mu_from_g2),
        ("relative_disagreement", r.relative_disagreement),
    ];
    out.emit(&match out.format {
        Format::Json => report::to_json(&r)?,
        Format::Csv => {
            let mut rows: Vec<Vec<String>> =
                fields.iter().filter_map(|(k, v)| v.map(|v| vec![k.to_string(), report::num(v)])).collect();
            if let Some(c) = r.consistency {
                rows.push(vec!["consistency".into(), c.into()]);
            }
            report::to_csv(&["quantity", "value"], &rows)?
        }
        Format::Table => {
            let mut rows: Vec<Vec<String>> =
                fields.iter().filter_map(|(k, v)| v.map(|v| vec![k.to_string(), report::human(v)])).collect();
            if let Some(c) = r.consistency {
                rows.push(vec!["consistency".into(), c.to_uppercase()]);
            }
            let mut text = report::table(&["quantity", "value"], &rows);
            if let Some(w) = &r.warning {
                text.push_str(&format!("warning: {w}\n"));
            }
            text
        }
    })?;
    Ok(ExitCode::SUCCESS)
}

fn reproduce(out: &Output, name: &str) -> Result<ExitCode> {
    let preset: Preset = name.parse()?;
    let checks = reproduce::run(preset)?;
    out.emit(&match out.format {
        Format::Table => report::table_aligned(report::CHECK_COLUMNS, &report::check_records(&checks, false), 2),
        Format::Csv => report::to_csv(report::CHECK_COLUMNS, &report::check_records(&checks, true))?,
        Format::Json => report::to_json(&checks)?,
    })?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        eprintln!("{failed} of {} check(s) failed", checks.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn wdm_cmd(out: &Output, plan_path: &Path, scenario_path: &Path, sim: Option<&SimArgs>) -> Result<ExitCode> {
    let plan = scenario::load_plan(plan_path)?;
    let sc = Scenario::load(scenario_path)?;
    let agg = match sim {
        Some(a) => wdm::aggregate_simulated(&plan, &sc.sim_config(a.slots, a.seed))?,
        None => wdm::aggregate(&plan, &sc.link_inputs())?,
    };
    out.emit(&match out.format {
        Format::Table => report::wdm_table(&agg),
        Format::Csv => report::to_csv(report::WDM_COLUMNS, &report::wdm_records(&agg))?,
        Format::Json => report::to_json(&agg)?,
    })?;
    Ok(ExitCode::SUCCESS)
}

