//! Force localization from sensor readings: one SVR per target coordinate,
//! plus cross-validated hyperparameter search.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{check_indices, DeformationDataset, FoldPlan, StandardizationStats};
use crate::error::{Error, Result};
use crate::plate::Point2;
use crate::svr::{gram_matrix, squared_distances, train_on_gram, SolverOptions, SvrHyperParams, SvrModel};

/// Position-head default when the locator reads a large candidate pool.
pub const DENSE_INPUT_PARAMS: SvrHyperParams = SvrHyperParams::new(10.0, 1e-4, 5e-2);

/// Position-head default for a handful of placed sensors. Squared input
/// distances shrink with the channel count, so γ grows to compensate.
pub const SPARSE_INPUT_PARAMS: SvrHyperParams = SvrHyperParams::new(3.0, 1e-4, 0.2);

/// Channel count at which [`DENSE_INPUT_PARAMS`] takes over.
pub const DENSE_INPUT_THRESHOLD: usize = 32;

pub fn default_params_for(n_inputs: usize) -> SvrHyperParams {
    if n_inputs >= DENSE_INPUT_THRESHOLD {
        DENSE_INPUT_PARAMS
    } else {
        SPARSE_INPUT_PARAMS
    }
}

/// Candidate values for the hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrGrid {
    pub c: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for SvrGrid {
    fn default() -> Self {
        Self {
            c: vec![0.1, 1.0, 10.0, 20.0, 100.0],
            epsilon: vec![1e-6, 1e-4, 1e-2],
            gamma: vec![2e-4, 2e-3, 2e-2, 5e-2, 2e-1],
        }
    }
}

impl SvrGrid {
    pub fn single(p: SvrHyperParams) -> Self {
        Self { c: vec![p.c], epsilon: vec![p.epsilon], gamma: vec![p.gamma] }
    }

    /// All grid points in tie-break order: C, then γ, then ε, ascending.
    pub fn points(&self) -> Vec<SvrHyperParams> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (cs, gs, es) = (sorted(&self.c), sorted(&self.gamma), sorted(&self.epsilon));
        let mut out = Vec::with_capacity(cs.len() * gs.len() * es.len());
        for &c in &cs {
            for &g in &gs {
                for &e in &es {
                    out.push(SvrHyperParams::new(c, e, g));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.c.is_empty() || self.epsilon.is_empty() || self.gamma.is_empty() {
            return Err(Error::validation("hyperparameter grid must be non-empty"));
        }
        self.points().iter().try_for_each(SvrHyperParams::validate)
    }
}

/// Affine map between a target and its standardized form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One target coordinate: an SVR trained on the standardized target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub model: SvrModel,
    pub scaler: TargetScaler,
}

impl Head {
    fn predict(&self, z: &[f64]) -> f64 {
        self.scaler.inverse(self.model.predict_unchecked(z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocatorParams {
    pub position: SvrHyperParams,
    /// Train a magnitude head with these parameters.
    pub magnitude: Option<SvrHyperParams>,
    pub solver: SolverOptions,
}

impl LocatorParams {
    pub fn position_only(position: SvrHyperParams) -> Self {
        Self { position, magnitude: None, solver: SolverOptions::default() }
    }
}

/// Estimated contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub position: Point2,
    pub magnitude: Option<f64>,
}

/// Per-coordinate SVR bundle mapping sensor readings to a contact estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceLocator {
    /// Dataset rows the locator reads, in input order.
    pub sensors: Vec<usize>,
    pub input_stats: StandardizationStats,
    pub u: Head,
    pub v: Head,
    pub magnitude: Option<Head>,
}

/// Error of one held-out trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialError {
    pub trial: usize,
    /// Euclidean position error (mm).
    pub position: f64,
    /// Absolute magnitude error (N), when the locator has a magnitude head.
    pub magnitude: Option<f64>,
}

/// Standardized inputs for `trials`, one row per trial.
fn sample_matrix(
    data: &DeformationDataset,
    sensors: &[usize],
    stats: &StandardizationStats,
    trials: &[usize],
) -> Result<DMatrix<f64>> {
    let raw = data.x().select_rows(sensors.iter()).select_columns(trials.iter());
    Ok(stats.apply(&raw)?.transpose())
}

fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn fit_head(
    gram: &DMatrix<f64>,
    inputs: &DMatrix<f64>,
    targets: &[f64],
    params: &SvrHyperParams,
    solver: &SolverOptions,
) -> Result<Head> {
    let scaler = TargetScaler::fit(targets);
    let z: Vec<f64> = targets.iter().map(|&t| scaler.forward(t)).collect();
    let (model, _) = train_on_gram(gram, inputs, &z, params, solver)?;
    Ok(Head { model, scaler })
}

impl ForceLocator {
    /// Fits input statistics and all heads on the `train` trials only.
    pub fn train(
        data: &DeformationDataset,
        sensors: &[usize],
        train: &[usize],
        params: &LocatorParams,
    ) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::validation("locator needs at least one sensor"));
        }
        check_indices(sensors, data.n_sensors(), "sensor")?;
        check_indices(train, data.n_trials(), "trial")?;
        if train.len() < 2 {
            return Err(Error::validation("locator training needs at least 2 trials"));
        }
        params.position.validate()?;
        let rows = data.x().select_rows(sensors.iter());
        let stats = StandardizationStats::fit(&rows, train)?;
        let inputs = sample_matrix(data, sensors, &stats, train)?;
        let trials = data.force_trials();
        let tu: Vec<f64> = train.iter().map(|&j| trials[j].u).collect();
        let tv: Vec<f64> = train.iter().map(|&j| trials[j].v).collect();
        let gram = gram_matrix(&inputs, params.position.gamma);
        let u = fit_head(&gram, &inputs, &tu, &params.position, &params.solver)?;
        let v = fit_head(&gram, &inputs, &tv, &params.position, &params.solver)?;
        let magnitude = match params.magnitude {
            Some(mp) => {
                mp.validate()?;
                let tm: Vec<f64> = train.iter().map(|&j| trials[j].magnitude).collect();
                let g = if mp.gamma == params.position.gamma { gram } else { gram_matrix(&inputs, mp.gamma) };
                Some(fit_head(&g, &inputs, &tm, &mp, &params.solver)?)
            }
            None => None,
        };
        Ok(Self { sensors: sensors.to_vec(), input_stats: stats, u, v, magnitude })
    }

    pub fn dim(&self) -> usize {
        self.sensors.len()
    }

    /// Estimate from readings already standardized with `input_stats`.
    pub fn locate_force(&self, standardized: &[f64]) -> Result<Estimate> {
        if standardized.len() != self.dim() {
            return Err(Error::validation(format!(
                "locator expects {} readings, got {}",
                self.dim(),
                standardized.len()
            )));
        }
        Ok(Estimate {
            position: Point2::new(self.u.predict(standardized), self.v.predict(standardized)),
            magnitude: self.magnitude.as_ref().map(|h| h.predict(standardized)),
        })
    }

    /// Estimate from raw readings of `self.sensors`.
    pub fn locate_raw(&self, raw: &[f64]) -> Result<Estimate> {
        let z = self.input_stats.apply_vector(raw)?;
        self.locate_force(z.as_slice())
    }

    /// Errors on `trials`; inputs listed in `failed` (positions within
    /// `self.sensors`) read as zero after standardization.
    pub fn evaluate(&self, data: &DeformationDataset, trials: &[usize], failed: &[usize]) -> Result<Vec<TrialError>> {
        check_indices(trials, data.n_trials(), "trial")?;
        check_indices(failed, self.dim(), "sensor position")?;
        let mut inputs = sample_matrix(data, &self.sensors, &self.input_stats, trials)?;
        for &f in failed {
            inputs.column_mut(f).fill(0.0);
        }
        let ft = data.force_trials();
        Ok(trials
            .par_iter()
            .enumerate()
            .map(|(r, &j)| {
                let z = row_vec(&inputs, r);
                let est = Estimate {
                    position: Point2::new(self.u.predict(&z), self.v.predict(&z)),
                    magnitude: self.magnitude.as_ref().map(|h| h.predict(&z)),
                };
                TrialError {
                    trial: j,
                    position: est.position.distance(&ft[j].position()),
                    magnitude: est.magnitude.map(|m| (m - ft[j].magnitude).abs()),
                }
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Which quantity a hyperparameter search scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchTarget {
    /// RMSE of the Euclidean position error (u and v heads share parameters).
    Position,
    /// RMSE of the magnitude error.
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchOutcome {
    pub best: SvrHyperParams,
    pub cv_error: f64,
    /// Every grid point with its mean fold error, in tie-break order.
    pub table: Vec<(SvrHyperParams, f64)>,
}

/// k-fold cross-validated grid search over `grid`.
///
/// `folds` partitions `trials` (fold plan index `r` refers to `trials[r]`).
/// Input statistics are refit on each fold's training part. The score is
/// the mean over folds of the per-fold RMSE; ties go to smaller C, then
/// smaller γ, then smaller ε.
pub fn grid_search_cv(
    data: &DeformationDataset,
    sensors: &[usize],
    trials: &[usize],
    grid: &SvrGrid,
    folds: &FoldPlan,
    target: SearchTarget,
    solver: &SolverOptions,
) -> Result<GridSearchOutcome> {
    grid.validate()?;
    if sensors.is_empty() {
        return Err(Error::validation("grid search needs at least one sensor"));
    }
    check_indices(sensors, data.n_sensors(), "sensor")?;
    check_indices(trials, data.n_trials(), "trial")?;
    if folds.n_trials() != trials.len() {
        return Err(Error::validation(format!(
            "fold plan covers {} trials but {} were given",
            folds.n_trials(),
            trials.len()
        )));
    }
    let points = grid.points();
    let mut gammas: Vec<f64> = points.iter().map(|p| p.gamma).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let rows = data.x().select_rows(sensors.iter());
    let ft = data.force_trials();

    let tasks: Vec<(usize, f64)> = (0..folds.k).flat_map(|f| gammas.iter().map(move |&g| (f, g))).collect();
    // (fold, gamma) -> per grid point fold RMSE, NaN for points with a different gamma
    let results: Vec<Result<Vec<f64>>> = tasks
        .par_iter()
        .map(|&(f, gamma)| {
            let train: Vec<usize> = folds.train_indices(f).into_iter().map(|r| trials[r]).collect();
            let test: Vec<usize> = folds.test_indices(f).into_iter().map(|r| trials[r]).collect();
            let stats = StandardizationStats::fit(&rows, &train)?;
            let xtr = stats.apply(&rows.select_columns(train.iter()))?.transpose();
            let xte = stats.apply(&rows.select_columns(test.iter()))?.transpose();
            let gram = gram_matrix(&xtr, gamma);
            let cross = squared_distances(&xte, &xtr).map(|d| (-gamma * d).exp());
            let mut out = vec![f64::NAN; points.len()];
            for (pi, p) in points.iter().enumerate() {
                if p.gamma != gamma {
                    continue;
                }
                let fold_err = match target {
                    SearchTarget::Position => {
                        let pu = fit_and_predict(&gram, &cross, &xtr, &train, |j| ft[j].u, p, solver)?;
                        let pv = fit_and_predict(&gram, &cross, &xtr, &train, |j| ft[j].v, p, solver)?;
                        let errs: Vec<f64> = test
                            .iter()
                            .enumerate()
                            .map(|(r, &j)| (pu[r] - ft[j].u).hypot(pv[r] - ft[j].v))
                            .collect();
                        rms(&errs)
                    }
                    SearchTarget::Magnitude => {
                        let pm = fit_and_predict(&gram, &cross, &xtr, &train, |j| ft[j].magnitude, p, solver)?;
                        let errs: Vec<f64> =
                            test.iter().enumerate().map(|(r, &j)| pm[r] - ft[j].magnitude).collect();
                        rms(&errs)
                    }
                };
                out[pi] = fold_err;
            }
            Ok(out)
        })
        .collect();

    let mut sums = vec![0.0; points.len()];
    for r in results {
        let per_point = r?;
        for (s, e) in sums.iter_mut().zip(per_point) {
            if !e.is_nan() {
                *s += e;
            }
        }
    }
    let table: Vec<(SvrHyperParams, f64)> =
        points.iter().zip(sums).map(|(p, s)| (*p, s / folds.k as f64)).collect();
    let (best, cv_error) = table
        .iter()
        .fold(None::<(SvrHyperParams, f64)>, |acc, &(p, e)| match acc {
            Some((_, be)) if e.is_nan() || e >= be => acc,
            _ => Some((p, e)),
        })
        .ok_or_else(|| Error::validation("empty grid"))?;
    Ok(GridSearchOutcome { best, cv_error, table })
}

/// Trains on standardized targets and returns predictions for the rows of `cross`.
pub(crate) fn fit_and_predict(
    gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    inputs: &DMatrix<f64>,
    train: &[usize],
    target: impl Fn(usize) -> f64,
    params: &SvrHyperParams,
    solver: &SolverOptions,
) -> Result<Vec<f64>> {
    let raw: Vec<f64> = train.iter().map(|&j| target(j)).collect();
    let scaler = TargetScaler::fit(&raw);
    let z: Vec<f64> = raw.iter().map(|&t| scaler.forward(t)).collect();
    let (model, report) = train_on_gram(gram, inputs, &z, params, solver)?;
    let coef = nalgebra::DVector::from_column_slice(&report.coefficients);
    let pred = cross * coef;
    Ok(pred.iter().map(|&p| scaler.inverse(p + model.bias)).collect())
}
