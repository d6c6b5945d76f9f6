//! Deformation dataset, per-sensor standardization and trial partitioning.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::plate::{ForceTrial, PlateSpec, Point2, Signal};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Provenance of a dataset. Both fields are absent for data that did not
/// come from the plate simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(skip)]
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<PlateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<Signal>,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self { version: DATASET_FORMAT_VERSION, spec: None, signal: None }
    }
}

/// Readings of N candidate sensors under M force trials.
///
/// Row `i` of `x` belongs to `sensor_sites[i]`, column `j` to `force_trials[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationDataset {
    x: DMatrix<f64>,
    sensor_sites: Vec<Point2>,
    force_trials: Vec<ForceTrial>,
    meta: DatasetMeta,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    version: u32,
    meta: DatasetMeta,
    sensor_sites: Vec<Point2>,
    force_trials: Vec<ForceTrial>,
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
}

impl DeformationDataset {
    pub fn new(
        x: DMatrix<f64>,
        sensor_sites: Vec<Point2>,
        force_trials: Vec<ForceTrial>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if x.nrows() != sensor_sites.len() {
            return Err(Error::validation(format!(
                "X has {} rows but there are {} sensor sites",
                x.nrows(),
                sensor_sites.len()
            )));
        }
        if x.ncols() != force_trials.len() {
            return Err(Error::validation(format!(
                "X has {} columns but there are {} force trials",
                x.ncols(),
                force_trials.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("X contains non-finite entries"));
        }
        Ok(Self { x, sensor_sites, force_trials, meta })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn sensor_sites(&self) -> &[Point2] {
        &self.sensor_sites
    }

    pub fn force_trials(&self) -> &[ForceTrial] {
        &self.force_trials
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn n_sensors(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_trials(&self) -> usize {
        self.x.ncols()
    }

    /// Sub-dataset with the given sensor rows, in the given order.
    pub fn select_sensors(&self, rows: &[usize]) -> Result<Self> {
        check_indices(rows, self.n_sensors(), "sensor")?;
        let x = self.x.select_rows(rows.iter());
        let sites = rows.iter().map(|&i| self.sensor_sites[i]).collect();
        Self::new(x, sites, self.force_trials.clone(), self.meta.clone())
    }

    /// Sub-dataset with the given trial columns, in the given order.
    pub fn select_trials(&self, cols: &[usize]) -> Result<Self> {
        check_indices(cols, self.n_trials(), "trial")?;
        let x = self.x.select_columns(cols.iter());
        let trials = cols.iter().map(|&j| self.force_trials[j]).collect();
        Self::new(x, self.sensor_sites.clone(), trials, self.meta.clone())
    }

    /// Index of the largest-magnitude trial at each distinct force position,
    /// in order of first appearance. Position studies train on these so that
    /// one reading pattern stands for one location.
    pub fn strongest_per_site(&self) -> Vec<usize> {
        let mut best: Vec<usize> = Vec::new();
        for (j, t) in self.force_trials.iter().enumerate() {
            match best.iter_mut().find(|&&mut b| {
                let s = &self.force_trials[b];
                s.u == t.u && s.v == t.v
            }) {
                Some(b) if self.force_trials[*b].magnitude < t.magnitude => *b = j,
                Some(_) => {}
                None => best.push(j),
            }
        }
        best
    }

    /// Copy of this dataset with `x` replaced (shape must match).
    pub fn with_x(&self, x: DMatrix<f64>) -> Result<Self> {
        Self::new(x, self.sensor_sites.clone(), self.force_trials.clone(), self.meta.clone())
    }

    /// SHA-256 over shape, coordinates and readings; identifies a dataset in run manifests.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_sensors() as u64).to_le_bytes());
        h.update((self.n_trials() as u64).to_le_bytes());
        for p in &self.sensor_sites {
            h.update(p.u.to_le_bytes());
            h.update(p.v.to_le_bytes());
        }
        for t in &self.force_trials {
            h.update(t.u.to_le_bytes());
            h.update(t.v.to_le_bytes());
            h.update(t.magnitude.to_le_bytes());
        }
        for v in self.x.iter() {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            version: DATASET_FORMAT_VERSION,
            meta: self.meta.clone(),
            sensor_sites: self.sensor_sites.clone(),
            force_trials: self.force_trials.clone(),
            x: self.x.row_iter().map(|r| r.iter().copied().collect()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        if file.version != DATASET_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported dataset version {} (expected {DATASET_FORMAT_VERSION})",
                file.version
            )));
        }
        let n = file.x.len();
        let m = file.x.first().map_or(file.force_trials.len(), Vec::len);
        if file.x.iter().any(|r| r.len() != m) {
            return Err(Error::validation("rows of X have unequal length"));
        }
        let x = DMatrix::from_fn(n, m, |i, j| file.x[i][j]);
        let meta = DatasetMeta { version: file.version, ..file.meta };
        Self::new(x, file.sensor_sites, file.force_trials, meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn check_indices(idx: &[usize], len: usize, what: &str) -> Result<()> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= len) {
        return Err(Error::validation(format!("{what} index {bad} out of range (size {len})")));
    }
    Ok(())
}

/// Per-sensor location and scale used to standardize readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose spread is zero (to working precision); they map to 0.
    pub zero_variance: Vec<bool>,
}

impl StandardizationStats {
    /// Population statistics of each row of `x` over the columns `source`.
    pub fn fit(x: &DMatrix<f64>, source: &[usize]) -> Result<Self> {
        if source.is_empty() {
            return Err(Error::validation("standardization needs at least one source trial"));
        }
        check_indices(source, x.ncols(), "trial")?;
        let n = source.len() as f64;
        let mut mean = Vec::with_capacity(x.nrows());
        let mut std = Vec::with_capacity(x.nrows());
        let mut zero_variance = Vec::with_capacity(x.nrows());
        for row in x.row_iter() {
            let mu = source.iter().map(|&j| row[j]).sum::<f64>() / n;
            let var = source.iter().map(|&j| (row[j] - mu).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            let scale = source.iter().map(|&j| row[j].abs()).fold(0.0, f64::max);
            let flat = sd == 0.0 || sd <= 1e-12 * scale;
            mean.push(mu);
            std.push(if flat { 0.0 } else { sd });
            zero_variance.push(flat);
        }
        Ok(Self { mean, std, zero_variance })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Standardizes every column of `x` (rows must match the fitted channels).
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.len() {
            return Err(Error::validation(format!(
                "expected {} channels, got {}",
                self.len(),
                x.nrows()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| self.scale(i, x[(i, j)])))
    }

    pub fn apply_vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.len() {
            return Err(Error::validation(format!(
                "expected {} readings, got {}",
                self.len(),
                x.len()
            )));
        }
        Ok(DVector::from_iterator(x.len(), x.iter().enumerate().map(|(i, &v)| self.scale(i, v))))
    }

    /// Stats for a subset of channels, in the given order.
    pub fn select(&self, channels: &[usize]) -> Self {
        Self {
            mean: channels.iter().map(|&i| self.mean[i]).collect(),
            std: channels.iter().map(|&i| self.std[i]).collect(),
            zero_variance: channels.iter().map(|&i| self.zero_variance[i]).collect(),
        }
    }

    fn scale(&self, i: usize, v: f64) -> f64 {
        if self.zero_variance[i] {
            0.0
        } else {
            (v - self.mean[i]) / self.std[i]
        }
    }
}

/// Standardizes each sensor row using statistics over the `stats_source` trials only.
pub fn standardize(
    data: &DeformationDataset,
    stats_source: &[usize],
) -> Result<(DeformationDataset, StandardizationStats)> {
    let stats = StandardizationStats::fit(data.x(), stats_source)?;
    let x = stats.apply(data.x())?;
    Ok((data.with_x(x)?, stats))
}

/// Assignment of trials to `k` cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n_trials(&self) -> usize {
        self.assignment.len()
    }

    /// Trials held out in fold `f`, ascending.
    pub fn test_indices(&self, f: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&j| self.assignment[j] == f).collect()
    }

    /// Trials used for training when fold `f` is held out, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&j| self.assignment[j] != f).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Deterministic shuffled partition of `m` trials into `k` folds whose sizes
/// differ by at most one.
pub fn make_folds(m: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::validation("need at least 2 folds"));
    }
    if k > m {
        return Err(Error::validation(format!("cannot make {k} folds from {m} trials")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; m];
    for (pos, &j) in order.iter().enumerate() {
        assignment[j] = pos % k;
    }
    Ok(FoldPlan { k, assignment, seed })
}

/// Disjoint train / validation / test trial sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Shuffles `m` trials and cuts them by `fractions` (train, validation, test).
/// Sizes are rounded for train and validation; test takes the remainder.
pub fn split(m: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitPlan> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv >= 0.0 && fs > 0.0) || ![ft, fv, fs].iter().all(|f| f.is_finite()) {
        return Err(Error::validation("split fractions must be positive"));
    }
    if ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split fractions sum to {} instead of 1",
            ft + fv + fs
        )));
    }
    let n_train = ((ft * m as f64).round() as usize).min(m);
    let n_val = ((fv * m as f64).round() as usize).min(m - n_train);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan { train, validation, test, seed })
}
