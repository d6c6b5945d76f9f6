//! End-to-end placement study: which trials to learn from, how to split
//! them, and how each selection method is driven on a dataset.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_folds, split, DeformationDataset, SplitPlan, StandardizationStats};
use crate::error::{Error, Result};
use crate::gp::{gp_grid_search, ExpKernel, GpKernelParams};
use crate::locator::SPARSE_INPUT_PARAMS;
use crate::placement::{
    entropy_select, greedy_svr_select, mi_select, pca_qr_select, smallest_sufficient_k, GreedySvrConfig, Method,
    Rehearsal, SelectionGoal, SelectionResult,
};
use crate::svr::{SolverOptions, SvrHyperParams};
use crate::SvrGrid;

/// Which trials a position study learns from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialSet {
    #[default]
    All,
    /// Only the largest load at every force position.
    Strongest,
}

impl fmt::Display for TrialSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialSet::Strongest => "strongest",
            TrialSet::All => "all",
        })
    }
}

impl FromStr for TrialSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strongest" => Ok(TrialSet::Strongest),
            "all" => Ok(TrialSet::All),
            other => Err(Error::validation(format!("unknown trial set '{other}' (expected strongest or all)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyPlan {
    /// Training trials the greedy search scores on (a seeded subsample).
    pub subsample: usize,
    pub folds: usize,
    /// Shrink the candidate pool to the QR pivots that reconstruct the
    /// standardized candidate readings to this relative error.
    pub compress_tolerance: Option<f64>,
    pub params: SvrHyperParams,
    pub rehearse: bool,
}

impl Default for GreedyPlan {
    fn default() -> Self {
        Self { subsample: 400, folds: 3, compress_tolerance: Some(0.01), params: SPARSE_INPUT_PARAMS, rehearse: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub trial_set: TrialSet,
    pub train_fraction: f64,
    pub seed: u64,
    pub greedy: GreedyPlan,
    pub gp: GpKernelParams,
    /// Fit `(l_scale, l_p)` on the training readings before the
    /// model-based selectors run.
    pub gp_grid_search: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            trial_set: TrialSet::default(),
            train_fraction: 0.85,
            seed: 7,
            greedy: GreedyPlan::default(),
            gp: GpKernelParams::default(),
            gp_grid_search: false,
        }
    }
}

pub const GP_L_SCALES: [f64; 6] = [0.01, 0.02, 0.033, 0.05, 0.1, 0.2];
pub const GP_L_PS: [f64; 3] = [1.0, 1.5, 1.9];

impl StudyConfig {
    /// The trials of `data` this study works on.
    pub fn view(&self, data: &DeformationDataset) -> Result<DeformationDataset> {
        match self.trial_set {
            TrialSet::All => Ok(data.clone()),
            TrialSet::Strongest => data.select_trials(&data.strongest_per_site()),
        }
    }

    /// Train/test split of the viewed trials.
    pub fn split(&self, n_trials: usize) -> Result<SplitPlan> {
        let f = self.train_fraction;
        split(n_trials, (f, 0.0, 1.0 - f), self.seed)
    }
}

/// Length scale of the kernel: the plate diagonal when known, otherwise
/// the diagonal of the sensor bounding box.
pub fn site_normalizer(data: &DeformationDataset) -> f64 {
    if let Some(spec) = data.meta().spec {
        return spec.diagonal();
    }
    let sites = data.sensor_sites();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in sites {
        lo = [lo[0].min(p.u), lo[1].min(p.v)];
        hi = [hi[0].max(p.u), hi[1].max(p.v)];
    }
    let d = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

fn standardized_rows(
    data: &DeformationDataset,
    rows: &[usize],
    train: &[usize],
) -> Result<nalgebra::DMatrix<f64>> {
    let x = data.x().select_rows(rows.iter());
    let stats = StandardizationStats::fit(&x, train)?;
    stats.apply(&x.select_columns(train.iter()))
}

/// Kernel for the model-based selectors, optionally refit on the
/// training readings of every sensor site.
pub fn gp_kernel(data: &DeformationDataset, train: &[usize], config: &StudyConfig) -> Result<ExpKernel> {
    let normalizer = site_normalizer(data);
    if !config.gp_grid_search {
        return ExpKernel::new(config.gp, normalizer);
    }
    let all: Vec<usize> = (0..data.n_sensors()).collect();
    let z = standardized_rows(data, &all, train)?;
    let fit = data.select_trials(train)?.with_x(z)?;
    let folds = make_folds(data.n_sensors(), 5.min(data.n_sensors()), config.seed)?;
    let out = gp_grid_search(&fit, normalizer, &GP_L_SCALES, &GP_L_PS, config.gp.beta_inv, &folds)?;
    ExpKernel::new(out.best, normalizer)
}

/// Runs one selection method on the viewed dataset. Only `train` trials
/// are ever read.
pub fn select(
    method: Method,
    data: &DeformationDataset,
    candidates: &[usize],
    train: &[usize],
    goal: &SelectionGoal,
    config: &StudyConfig,
) -> Result<SelectionResult> {
    let mut result = match method {
        Method::PcaQr => {
            goal.validate(candidates.len())?;
            let z = standardized_rows(data, candidates, train)?;
            let budgets: Vec<usize> = (1..=goal.max_budget).collect();
            pca_qr_select(&z, candidates, &budgets)?
        }
        Method::Entropy => {
            let kernel = gp_kernel(data, train, config)?;
            entropy_select(&kernel, data.sensor_sites(), candidates, goal)?
        }
        Method::Mi => {
            let kernel = gp_kernel(data, train, config)?;
            let domain: Vec<usize> = (0..data.n_sensors()).collect();
            mi_select(&kernel, data.sensor_sites(), candidates, &domain, goal)?
        }
        Method::GreedySvr => greedy(data, candidates, train, goal, config)?,
    };
    result.seed = config.seed;
    result.config = serde_json::json!({ "selector": result.config, "study": config });
    Ok(result)
}

fn greedy(
    data: &DeformationDataset,
    candidates: &[usize],
    train: &[usize],
    goal: &SelectionGoal,
    config: &StudyConfig,
) -> Result<SelectionResult> {
    let plan = &config.greedy;
    goal.validate(candidates.len())?;
    let pool = match plan.compress_tolerance {
        None => candidates.to_vec(),
        Some(tol) => {
            let z = standardized_rows(data, candidates, train)?;
            let (_, rows) = smallest_sufficient_k(&z, tol)?;
            let mut pool: Vec<usize> = if rows.len() >= goal.max_budget {
                rows.iter().map(|&r| candidates[r]).collect()
            } else {
                pca_qr_select(&z, candidates, &[goal.max_budget])?
                    .at_budget(goal.max_budget)
                    .map(<[usize]>::to_vec)
                    .unwrap_or_else(|| candidates.to_vec())
            };
            pool.sort_unstable();
            pool
        }
    };
    let mut trials = train.to_vec();
    if plan.subsample < trials.len() {
        trials.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
        trials.truncate(plan.subsample);
        trials.sort_unstable();
    }
    let folds = make_folds(trials.len(), plan.folds, config.seed)?;
    let gconfig = GreedySvrConfig {
        params: plan.params,
        solver: SolverOptions::default(),
        rehearse: plan.rehearse.then(|| Rehearsal { grid: SvrGrid::default(), up_to_budget: 3 }),
    };
    let mut result = greedy_svr_select(data, &pool, &trials, &folds, goal, &gconfig)?;
    if pool.len() < candidates.len() {
        result.diagnostics.push(format!("candidate pool compressed from {} to {}", candidates.len(), pool.len()));
    }
    Ok(result)
}
