//! Forward greedy selection scored by cross-validated localization error.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Method, SelectionGoal, SelectionResult};
use crate::dataset::{check_indices, DeformationDataset, FoldPlan, StandardizationStats};
use crate::error::{Error, Result};
use crate::locator::{fit_and_predict, mean, rms, std_dev, SvrGrid};
use crate::svr::{SolverOptions, SvrHyperParams};

/// Per-subset hyperparameter search for the first few budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rehearsal {
    pub grid: SvrGrid,
    /// Search the grid at budgets `1..=up_to_budget`; later steps use the fixed parameters.
    pub up_to_budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedySvrConfig {
    /// Fixed parameters for both position heads.
    pub params: SvrHyperParams,
    pub solver: SolverOptions,
    pub rehearse: Option<Rehearsal>,
}

impl GreedySvrConfig {
    pub fn fixed(params: SvrHyperParams) -> Self {
        Self { params, solver: SolverOptions::default(), rehearse: None }
    }
}

/// Everything one fold needs, with distances accumulated over the chosen set.
struct FoldCache {
    train: Vec<usize>,
    test: Vec<usize>,
    /// Standardized candidate readings, candidates × trials.
    z_train: DMatrix<f64>,
    z_test: DMatrix<f64>,
    d_train: DMatrix<f64>,
    d_test: DMatrix<f64>,
}

impl FoldCache {
    fn with_candidate(&self, c: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let zt = self.z_train.row(c);
        let zs = self.z_test.row(c);
        let dt = DMatrix::from_fn(self.train.len(), self.train.len(), |i, j| {
            self.d_train[(i, j)] + (zt[i] - zt[j]).powi(2)
        });
        let ds = DMatrix::from_fn(self.test.len(), self.train.len(), |i, j| {
            self.d_test[(i, j)] + (zs[i] - zt[j]).powi(2)
        });
        (dt, ds)
    }

    fn absorb(&mut self, c: usize) {
        let (dt, ds) = self.with_candidate(c);
        self.d_train = dt;
        self.d_test = ds;
    }
}

/// Fold RMSE of the Euclidean position error for the set `chosen + [c]`.
#[allow(clippy::too_many_arguments)]
fn fold_error(
    data: &DeformationDataset,
    fold: &FoldCache,
    chosen: &[usize],
    c: usize,
    params: &[SvrHyperParams],
    solver: &SolverOptions,
) -> Result<f64> {
    let (dt, ds) = fold.with_candidate(c);
    let mut rows: Vec<usize> = chosen.to_vec();
    rows.push(c);
    let inputs = fold.z_train.select_rows(rows.iter()).transpose();
    let ft = data.force_trials();
    let mut best = f64::INFINITY;
    let mut last_gamma = f64::NAN;
    let (mut gram, mut cross) = (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0));
    for p in params {
        if p.gamma != last_gamma {
            gram = dt.map(|d| (-p.gamma * d).exp());
            cross = ds.map(|d| (-p.gamma * d).exp());
            last_gamma = p.gamma;
        }
        let pu = fit_and_predict(&gram, &cross, &inputs, &fold.train, |j| ft[j].u, p, solver)?;
        let pv = fit_and_predict(&gram, &cross, &inputs, &fold.train, |j| ft[j].v, p, solver)?;
        let errs: Vec<f64> =
            fold.test.iter().enumerate().map(|(r, &j)| (pu[r] - ft[j].u).hypot(pv[r] - ft[j].v)).collect();
        best = best.min(rms(&errs));
    }
    Ok(best)
}

/// Greedy forward selection over `candidates` (dataset sensor indices).
///
/// `folds` partitions `trials`. At every step each remaining candidate is
/// scored by the mean over folds of the held-out position RMSE of a locator
/// reading the already chosen sensors plus that candidate; the lowest score
/// wins, ties to the smaller candidate index. Input statistics are fit on
/// each fold's training trials. Candidates whose solver fails are skipped
/// for that step and noted in the diagnostics.
pub fn greedy_svr_select(
    data: &DeformationDataset,
    candidates: &[usize],
    trials: &[usize],
    folds: &FoldPlan,
    goal: &SelectionGoal,
    config: &GreedySvrConfig,
) -> Result<SelectionResult> {
    config.params.validate()?;
    check_indices(candidates, data.n_sensors(), "candidate")?;
    check_indices(trials, data.n_trials(), "trial")?;
    let mut cand = candidates.to_vec();
    cand.sort_unstable();
    cand.dedup();
    if cand.len() != candidates.len() {
        return Err(Error::validation("duplicate candidate indices"));
    }
    goal.validate(cand.len())?;
    if folds.n_trials() != trials.len() {
        return Err(Error::validation("fold plan must partition the given trials"));
    }
    let rows = data.x().select_rows(cand.iter());
    let mut caches: Vec<FoldCache> = (0..folds.k)
        .map(|f| {
            let train: Vec<usize> = folds.train_indices(f).into_iter().map(|r| trials[r]).collect();
            let test: Vec<usize> = folds.test_indices(f).into_iter().map(|r| trials[r]).collect();
            let stats = StandardizationStats::fit(&rows, &train)?;
            let z_train = stats.apply(&rows.select_columns(train.iter()))?;
            let z_test = stats.apply(&rows.select_columns(test.iter()))?;
            Ok(FoldCache {
                d_train: DMatrix::zeros(train.len(), train.len()),
                d_test: DMatrix::zeros(test.len(), train.len()),
                train,
                test,
                z_train,
                z_test,
            })
        })
        .collect::<Result<_>>()?;

    let fixed = vec![config.params];
    let mut chosen: Vec<usize> = Vec::new(); // positions in `cand`
    let mut scores = Vec::new();
    let mut spread = Vec::new();
    let mut diagnostics = Vec::new();
    for step in 1..=goal.max_budget {
        let params: Vec<SvrHyperParams> = match &config.rehearse {
            Some(r) if step <= r.up_to_budget => r.grid.points(),
            _ => fixed.clone(),
        };
        let remaining: Vec<usize> = (0..cand.len()).filter(|c| !chosen.contains(c)).collect();
        let tasks: Vec<(usize, usize)> =
            remaining.iter().flat_map(|&c| (0..folds.k).map(move |f| (c, f))).collect();
        let results: Vec<Result<f64>> = tasks
            .par_iter()
            .map(|&(c, f)| fold_error(data, &caches[f], &chosen, c, &params, &config.solver))
            .collect();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut results = results.into_iter();
        for &c in &remaining {
            let per_fold: Result<Vec<f64>> = results.by_ref().take(folds.k).collect();
            match per_fold {
                Ok(errs) => {
                    let m = mean(&errs);
                    if best.is_none_or(|(_, b, _)| m < b) {
                        best = Some((c, m, std_dev(&errs) / (errs.len() as f64).sqrt()));
                    }
                }
                Err(e) if e.is_numerical() => {
                    diagnostics.push(format!("step {step}: candidate {} skipped ({e})", cand[c]));
                }
                Err(e) => return Err(e),
            }
        }
        let Some((c, score, se)) = best else {
            diagnostics.push(format!("step {step}: no candidate could be scored, stopping"));
            break;
        };
        chosen.push(c);
        scores.push(score);
        spread.push(se);
        caches.iter_mut().for_each(|fc| fc.absorb(c));
        if goal.target_error.is_some_and(|d| score <= d) {
            break;
        }
    }
    if chosen.is_empty() {
        return Err(Error::Convergence { iterations: config.solver.max_iterations, residual: f64::NAN });
    }
    let order = chosen.iter().map(|&c| cand[c]).collect();
    let cfg = serde_json::json!({
        "svr": config,
        "goal": goal,
        "n_candidates": cand.len(),
        "n_trials": trials.len(),
        "folds": folds.k,
    });
    let mut result = SelectionResult::from_order(Method::GreedySvr, order, scores, diagnostics, cfg, folds.seed);
    result.score_spread = spread;
    Ok(result)
}
