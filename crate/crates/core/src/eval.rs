//! Error-vs-budget comparison, sensor-failure robustness, force-interval
//! breakdown, and report output (CSV, SVG, JSON manifest).

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{check_indices, DeformationDataset};
use crate::error::{Error, Result};
use crate::locator::{mean, std_dev, ForceLocator, LocatorParams};
use crate::placement::{Method, SelectionResult};

/// Force bins (N): the last one is closed on the right.
pub const DEFAULT_INTERVALS: [(f64, f64); 4] = [(0.0, 4.9), (4.9, 9.8), (9.8, 19.6), (19.6, 34.3)];

/// Trial split a report section was computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetCell {
    pub method: Method,
    pub budget: usize,
    pub seed: u64,
    pub sensors: Vec<usize>,
    /// Mean Euclidean test position error (mm).
    pub mean_error: f64,
    /// Spread of the per-trial errors (mm).
    pub std_error: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub method: Method,
    pub failed: usize,
    pub repetitions: usize,
    /// Mean over repetitions of the mean test position error (mm).
    pub mean_error: f64,
    /// Spread over repetitions (mm).
    pub std_error: f64,
    pub retrained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub lower: f64,
    pub upper: f64,
    pub n_trials: usize,
    /// `None` when the bin is empty.
    pub position_mean: Option<f64>,
    pub position_std: Option<f64>,
    pub magnitude_mean: Option<f64>,
    pub magnitude_std: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset_hash: String,
    pub error_vs_budget: Vec<BudgetCell>,
    pub robustness: Vec<RobustnessRow>,
    pub force_intervals: Vec<IntervalRow>,
    pub seeds: Vec<u64>,
    /// Resolved configuration of the run that produced the numbers.
    pub config: serde_json::Value,
    pub runtime_seconds: f64,
}

fn position_errors(errs: &[crate::locator::TrialError]) -> Vec<f64> {
    errs.iter().map(|e| e.position).collect()
}

/// Held-out position error of a locator per (method, budget).
///
/// Every cell trains a fresh locator on `split.train` restricted to the
/// selected sensors and scores it on `split.test`.
pub fn error_vs_budget(
    data: &DeformationDataset,
    selections: &[SelectionResult],
    budgets: &[usize],
    split: &EvalSplit,
    params: &LocatorParams,
) -> Result<Vec<BudgetCell>> {
    check_indices(&split.train, data.n_trials(), "trial")?;
    check_indices(&split.test, data.n_trials(), "trial")?;
    let mut jobs = Vec::new();
    for sel in selections {
        for &k in budgets {
            let sensors = sel.at_budget(k).ok_or_else(|| {
                Error::validation(format!("{} selection does not cover budget {k}", sel.method))
            })?;
            jobs.push((sel.method, k, sensors.to_vec()));
        }
    }
    jobs.par_iter()
        .map(|(method, k, sensors)| {
            let loc = ForceLocator::train(data, sensors, &split.train, params)?;
            let errs = position_errors(&loc.evaluate(data, &split.test, &[])?);
            Ok(BudgetCell {
                method: *method,
                budget: *k,
                seed: split.seed,
                sensors: sensors.clone(),
                mean_error: mean(&errs),
                std_error: std_dev(&errs),
                n_test: errs.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub failure_counts: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    /// Retrain on the surviving sensors instead of zeroing the failed inputs.
    pub retrain: bool,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self { failure_counts: (0..=5).collect(), repetitions: 20, seed: 0, retrain: false }
    }
}

/// Test error when `f` randomly chosen sensors of `sensors` fail.
///
/// By default the locator trained on all of `sensors` is kept and the
/// failed inputs read zero after standardization.
pub fn failure_robustness(
    data: &DeformationDataset,
    method: Method,
    sensors: &[usize],
    split: &EvalSplit,
    params: &LocatorParams,
    config: &RobustnessConfig,
) -> Result<Vec<RobustnessRow>> {
    if config.repetitions == 0 {
        return Err(Error::validation("repetitions must be positive"));
    }
    if let Some(&f) = config.failure_counts.iter().max() {
        if f > sensors.len() {
            return Err(Error::validation(format!("cannot fail {f} of {} sensors", sensors.len())));
        }
    }
    let base = ForceLocator::train(data, sensors, &split.train, params)?;
    let mut rows = Vec::new();
    for &f in &config.failure_counts {
        let draws: Vec<Vec<usize>> = (0..config.repetitions)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ ((f as u64) << 32) ^ r as u64);
                let mut v = sample(&mut rng, sensors.len(), f).into_vec();
                v.sort_unstable();
                v
            })
            .collect();
        let means: Vec<f64> = draws
            .par_iter()
            .map(|failed| {
                let errs = if config.retrain && !failed.is_empty() {
                    let alive: Vec<usize> =
                        (0..sensors.len()).filter(|i| !failed.contains(i)).map(|i| sensors[i]).collect();
                    if alive.is_empty() {
                        return Err(Error::validation("every sensor failed; nothing to retrain on"));
                    }
                    let loc = ForceLocator::train(data, &alive, &split.train, params)?;
                    loc.evaluate(data, &split.test, &[])?
                } else {
                    base.evaluate(data, &split.test, failed)?
                };
                Ok(mean(&position_errors(&errs)))
            })
            .collect::<Result<_>>()?;
        rows.push(RobustnessRow {
            method,
            failed: f,
            repetitions: config.repetitions,
            mean_error: mean(&means),
            std_error: std_dev(&means),
            retrained: config.retrain,
        });
    }
    Ok(rows)
}

/// Position and magnitude errors binned by the true force magnitude.
pub fn force_interval_report(
    data: &DeformationDataset,
    locator: &ForceLocator,
    test: &[usize],
    intervals: &[(f64, f64)],
) -> Result<Vec<IntervalRow>> {
    if intervals.is_empty() {
        return Err(Error::validation("no force intervals given"));
    }
    let errs = locator.evaluate(data, test, &[])?;
    let ft = data.force_trials();
    let last = intervals.len() - 1;
    Ok(intervals
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            let inside: Vec<_> = errs
                .iter()
                .filter(|e| {
                    let m = ft[e.trial].magnitude;
                    m >= lo && (m < hi || (i == last && m <= hi))
                })
                .collect();
            let pos: Vec<f64> = inside.iter().map(|e| e.position).collect();
            let mag: Vec<f64> = inside.iter().filter_map(|e| e.magnitude).collect();
            let stat = |v: &[f64], f: fn(&[f64]) -> f64| if v.is_empty() { None } else { Some(f(v)) };
            IntervalRow {
                lower: lo,
                upper: hi,
                n_trials: inside.len(),
                position_mean: stat(&pos, mean),
                position_std: stat(&pos, std_dev),
                magnitude_mean: stat(&mag, mean),
                magnitude_std: stat(&mag, std_dev),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Svg,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "svg" => Ok(Self::Svg),
            "json" => Ok(Self::Json),
            _ => Err(Error::validation(format!("unknown report format '{s}' (valid: csv, svg, json)"))),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::domain(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::domain(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::domain(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn error_vs_budget_csv(report: &EvaluationReport) -> Result<String> {
    csv_text(
        &["method", "budget", "seed", "mean_error_mm", "std_error_mm", "n_test", "sensors"],
        report
            .error_vs_budget
            .iter()
            .map(|c| {
                let sensors: Vec<String> = c.sensors.iter().map(|s| s.to_string()).collect();
                vec![
                    c.method.to_string(),
                    c.budget.to_string(),
                    c.seed.to_string(),
                    c.mean_error.to_string(),
                    c.std_error.to_string(),
                    c.n_test.to_string(),
                    sensors.join(" "),
                ]
            })
            .collect(),
    )
}

pub fn robustness_csv(report: &EvaluationReport) -> Result<String> {
    csv_text(
        &["method", "failed", "repetitions", "mean_error_mm", "std_error_mm", "retrained"],
        report
            .robustness
            .iter()
            .map(|r| {
                vec![
                    r.method.to_string(),
                    r.failed.to_string(),
                    r.repetitions.to_string(),
                    r.mean_error.to_string(),
                    r.std_error.to_string(),
                    r.retrained.to_string(),
                ]
            })
            .collect(),
    )
}

pub fn force_intervals_csv(report: &EvaluationReport) -> Result<String> {
    csv_text(
        &["lower_n", "upper_n", "n_trials", "position_mean_mm", "position_std_mm", "magnitude_mean_n", "magnitude_std_n"],
        report
            .force_intervals
            .iter()
            .map(|r| {
                vec![
                    r.lower.to_string(),
                    r.upper.to_string(),
                    r.n_trials.to_string(),
                    opt(r.position_mean),
                    opt(r.position_std),
                    opt(r.magnitude_mean),
                    opt(r.magnitude_std),
                ]
            })
            .collect(),
    )
}

const PALETTE: [&str; 4] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a"];

/// Minimal line chart; one polyline per named series of (x, y) points.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 60.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - y / y1 * (h - 2.0 * pad);
    let esc = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, w / 2.0, h - 15.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        esc(y_label)
    );
    for i in 0..=4 {
        let y = y1 * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{:.3}</text>"#, pad - 4.0, sy(y) + 3.0, y);
    }
    for (i, (name, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            w - pad + 4.0 - 80.0,
            pad + 16.0 * i as f64,
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn by_method<T>(rows: &[T], method: impl Fn(&T) -> Method, point: impl Fn(&T) -> (f64, f64)) -> Vec<(String, Vec<(f64, f64)>)> {
    Method::ALL
        .iter()
        .filter_map(|&m| {
            let mut p: Vec<(f64, f64)> = rows.iter().filter(|r| method(r) == m).map(&point).collect();
            p.sort_by(|a, b| a.0.total_cmp(&b.0));
            (!p.is_empty()).then(|| (m.to_string(), p))
        })
        .collect()
}

/// Writes the requested formats into `dir` and returns the written paths.
pub fn emit_report(report: &EvaluationReport, dir: impl AsRef<Path>, formats: &[ReportFormat]) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text)?;
        written.push(p);
        Ok(())
    };
    for f in formats {
        match f {
            ReportFormat::Csv => {
                put("error_vs_budget.csv", error_vs_budget_csv(report)?)?;
                put("robustness.csv", robustness_csv(report)?)?;
                put("force_intervals.csv", force_intervals_csv(report)?)?;
            }
            ReportFormat::Svg => {
                let budget = by_method(&report.error_vs_budget, |c| c.method, |c| (c.budget as f64, c.mean_error));
                put("error_vs_budget.svg", line_chart_svg("Test error vs sensor budget", "budget", "mean position error (mm)", &budget))?;
                let rob = by_method(&report.robustness, |r| r.method, |r| (r.failed as f64, r.mean_error));
                put("robustness.svg", line_chart_svg("Sensor failure robustness", "failed sensors", "mean position error (mm)", &rob))?;
            }
            ReportFormat::Json => put("manifest.json", serde_json::to_string_pretty(report)?)?,
        }
    }
    Ok(written)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<EvaluationReport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
