//! ε-insensitive support vector regression with an RBF kernel.
//!
//! The dual is solved in the standard 2n-variable form
//!
//! ```text
//! min  ½ βᵀQβ + pᵀβ   s.t.  zᵀβ = 0,  0 ≤ β ≤ C
//! β = [α; α*],  z = [+1…; −1…],  Q_st = z_s z_t K(s, t),
//! p = [ε − y; ε + y]
//! ```
//!
//! by sequential minimal optimization: each iteration moves the most
//! KKT-violating index `i` together with the partner `j` that gives the
//! largest second-order decrease of the objective, then updates the gradient.
//! The dual coefficient of sample `t` is `α_t − α*_t`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrHyperParams {
    /// Trade-off between flatness and tube violations.
    pub c: f64,
    /// Half-width of the insensitive tube.
    pub epsilon: f64,
    /// RBF sensitivity.
    pub gamma: f64,
}

impl SvrHyperParams {
    pub const fn new(c: f64, epsilon: f64, gamma: f64) -> Self {
        Self { c, epsilon, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::validation("C must be positive and finite"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::validation("epsilon must be non-negative and finite"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::validation("gamma must be positive and finite"));
        }
        Ok(())
    }
}

impl Default for SvrHyperParams {
    fn default() -> Self {
        Self::new(0.1, 1e-4, 2e-3)
    }
}

/// `exp(-gamma * |x1 - x2|^2)`.
pub fn rbf_kernel(x1: &[f64], x2: &[f64], gamma: f64) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::validation(format!(
            "kernel inputs have dimensions {} and {}",
            x1.len(),
            x2.len()
        )));
    }
    Ok((-gamma * squared_distance(x1, x2)).exp())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pairwise squared distances between the rows of `a` and the rows of `b`.
pub(crate) fn squared_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let rows_a: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
    let rows_b: Vec<Vec<f64>> = b.row_iter().map(|r| r.iter().copied().collect()).collect();
    let cols: Vec<Vec<f64>> = rows_b
        .par_iter()
        .map(|rb| rows_a.iter().map(|ra| squared_distance(ra, rb)).collect())
        .collect();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| cols[j][i])
}

/// RBF Gram matrix of the rows of `x`.
pub fn gram_matrix(x: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    squared_distances(x, x).map(|d| (-gamma * d).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the maximal KKT violation gap drops below this value.
    pub tolerance: f64,
    /// Cap on pair updates.
    pub max_iterations: usize,
    /// Record the dual objective after every update (diagnostics only).
    pub record_objective: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-5, max_iterations: 10_000_000, record_objective: false }
    }
}

/// Trained regressor: `F(x) = Σ coef_j k(support_j, x) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub bias: f64,
    pub params: SvrHyperParams,
    pub dim: usize,
}

/// Solver diagnostics for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    /// Final maximal violation gap.
    pub kkt_gap: f64,
    /// `½ cᵀKc − yᵀc + ε Σ(α + α*)` at the solution.
    pub dual_objective: f64,
    /// Dual coefficient per training sample (including zeros).
    pub coefficients: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

impl SvrModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::validation(format!(
                "model expects {} inputs, got {}",
                self.dim,
                x.len()
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let g = self.params.gamma;
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, c)| c * (-g * squared_distance(s, x)).exp())
            .sum::<f64>()
            + self.bias
    }

    /// `‖w‖² = cᵀKc` over the support set.
    pub fn weight_norm_sq(&self) -> f64 {
        let g = self.params.gamma;
        let mut total = 0.0;
        for (si, ci) in self.support.iter().zip(&self.coef) {
            for (sj, cj) in self.support.iter().zip(&self.coef) {
                total += ci * cj * (-g * squared_distance(si, sj)).exp();
            }
        }
        total
    }

    /// Slacks and primal objective `½‖w‖² + C Σ ξ` on the given samples.
    pub fn training_objective(&self, inputs: &DMatrix<f64>, targets: &[f64]) -> Result<TrainingObjective> {
        if inputs.nrows() != targets.len() {
            return Err(Error::validation("inputs and targets differ in length"));
        }
        let mut slack = Vec::with_capacity(targets.len());
        for (row, &y) in inputs.row_iter().zip(targets) {
            let x: Vec<f64> = row.iter().copied().collect();
            let f = self.predict(&x)?;
            slack.push(((f - y).abs() - self.params.epsilon).max(0.0));
        }
        let objective = 0.5 * self.weight_norm_sq() + self.params.c * slack.iter().sum::<f64>();
        Ok(TrainingObjective { slack, objective })
    }
}

/// Primal view of a trained model on its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingObjective {
    /// `ξ_i = max(0, |F(x_i) − y_i| − ε)`.
    pub slack: Vec<f64>,
    /// `L = ½‖w‖² + C Σ ξ_i`.
    pub objective: f64,
}

fn check_training_data(inputs: &DMatrix<f64>, targets: &[f64]) -> Result<()> {
    if inputs.nrows() != targets.len() {
        return Err(Error::validation(format!(
            "{} input rows but {} targets",
            inputs.nrows(),
            targets.len()
        )));
    }
    if targets.len() < 2 {
        return Err(Error::validation("SVR training needs at least 2 samples"));
    }
    if inputs.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::validation("training data contains non-finite values"));
    }
    Ok(())
}

/// Trains an ε-SVR on the rows of `inputs`.
pub fn train_svr(inputs: &DMatrix<f64>, targets: &[f64], params: &SvrHyperParams) -> Result<SvrModel> {
    train_svr_with(inputs, targets, params, &SolverOptions::default()).map(|(m, _)| m)
}

pub fn train_svr_with(
    inputs: &DMatrix<f64>,
    targets: &[f64],
    params: &SvrHyperParams,
    options: &SolverOptions,
) -> Result<(SvrModel, SolverReport)> {
    params.validate()?;
    check_training_data(inputs, targets)?;
    let gram = gram_matrix(inputs, params.gamma);
    train_on_gram(&gram, inputs, targets, params, options)
}

/// Solver entry point for callers that reuse one Gram matrix across
/// several targets or (C, ε) settings.
pub(crate) fn train_on_gram(
    gram: &DMatrix<f64>,
    inputs: &DMatrix<f64>,
    targets: &[f64],
    params: &SvrHyperParams,
    options: &SolverOptions,
) -> Result<(SvrModel, SolverReport)> {
    let n = targets.len();
    let (sol, report) = solve_dual(gram, targets, params, options)?;
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        let c = sol.coef[t];
        if c != 0.0 {
            support.push(inputs.row(t).iter().copied().collect());
            coef.push(c);
        }
    }
    let model = SvrModel { support, coef, bias: sol.bias, params: *params, dim: inputs.ncols() };
    Ok((model, report))
}

struct DualSolution {
    coef: Vec<f64>,
    bias: f64,
}

fn solve_dual(
    k: &DMatrix<f64>,
    y: &[f64],
    params: &SvrHyperParams,
    options: &SolverOptions,
) -> Result<(DualSolution, SolverReport)> {
    let n = y.len();
    let l = 2 * n;
    let c = params.c;
    let z = |t: usize| if t < n { 1.0 } else { -1.0 };
    let p: Vec<f64> = (0..l)
        .map(|t| if t < n { params.epsilon - y[t] } else { params.epsilon + y[t - n] })
        .collect();
    let mut beta = vec![0.0; l];
    let mut grad = p.clone();
    let kdiag: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();

    let objective = |beta: &[f64], grad: &[f64]| -> f64 {
        0.5 * beta.iter().zip(grad.iter().zip(&p)).map(|(b, (g, pp))| b * (g + pp)).sum::<f64>()
    };
    let in_up = |b: f64, zt: f64| if zt > 0.0 { b < c } else { b > 0.0 };
    let in_low = |b: f64, zt: f64| if zt > 0.0 { b > 0.0 } else { b < c };

    let mut trace = Vec::new();
    if options.record_objective {
        trace.push(0.0);
    }
    let mut iterations = 0;
    let gap = loop {
        // i: maximal violation over I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..l {
            if in_up(beta[t], z(t)) {
                let v = -z(t) * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        // j: best second-order decrease over I_low
        let mut gmin = f64::INFINITY;
        let mut best = f64::INFINITY;
        let mut j_sel = usize::MAX;
        if i_sel != usize::MAX {
            let ki = k.column(i_sel % n);
            for t in 0..l {
                if !in_low(beta[t], z(t)) {
                    continue;
                }
                let v = -z(t) * grad[t];
                if v < gmin {
                    gmin = v;
                }
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = kdiag[i_sel % n] + kdiag[t % n] - 2.0 * ki[t % n];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let score = -(b * b) / a;
                    if score < best {
                        best = score;
                        j_sel = t;
                    }
                }
            }
        }
        let gap = gmax - gmin;
        if gap.is_nan() || gap < options.tolerance || j_sel == usize::MAX {
            break gap.max(0.0);
        }
        if iterations >= options.max_iterations {
            return Err(Error::Convergence { iterations, residual: gap });
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (zi, zj) = (z(i), z(j));
        let kij = k[(i % n, j % n)];
        let qij = zi * zj * kij;
        let (old_i, old_j) = (beta[i], beta[j]);
        if zi != zj {
            let mut quad = kdiag[i % n] + kdiag[j % n] + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let mut quad = kdiag[i % n] + kdiag[j % n] - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }
        let di = beta[i] - old_i;
        let dj = beta[j] - old_j;
        let ki = k.column(i % n);
        let kj = k.column(j % n);
        for t in 0..l {
            let zt = z(t);
            grad[t] += zt * (zi * ki[t % n] * di + zj * kj[t % n] * dj);
        }
        if options.record_objective {
            trace.push(objective(&beta, &grad));
        }
    };

    // bias: average over free variables, else midpoint of the feasible interval
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for t in 0..l {
        let yg = z(t) * grad[t];
        if beta[t] >= c {
            if z(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if beta[t] <= 0.0 {
            if z(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_count += 1;
        }
    }
    let rho = if free_count > 0 { free_sum / free_count as f64 } else { 0.5 * (ub + lb) };
    let coef: Vec<f64> = (0..n).map(|t| beta[t] - beta[t + n]).collect();
    let report = SolverReport {
        iterations,
        kkt_gap: gap,
        dual_objective: objective(&beta, &grad),
        coefficients: coef.clone(),
        objective_trace: trace,
    };
    Ok((DualSolution { coef, bias: -rho }, report))
}

/// Dual objective `½ cᵀKc − yᵀc + ε ‖c‖₁` for arbitrary coefficients.
pub fn dual_objective(gram: &DMatrix<f64>, targets: &[f64], coef: &[f64], epsilon: f64) -> f64 {
    let cv = DVector::from_column_slice(coef);
    let quad = (cv.transpose() * gram * &cv)[(0, 0)];
    let lin: f64 = targets.iter().zip(coef).map(|(y, c)| y * c).sum();
    0.5 * quad - lin + epsilon * coef.iter().map(|c| c.abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_values() {
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.7).unwrap(), 1.0);
        let x1 = [0.0, 0.0];
        let x2 = [20.0, 10.0]; // |d|^2 = 500
        let k = rbf_kernel(&x1, &x2, 2e-3).unwrap();
        assert_relative_eq!(k, (-1.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(rbf_kernel(&x1, &x2, 1e-12).unwrap(), 1.0, max_relative = 1e-9);
        assert!(matches!(rbf_kernel(&[1.0], &[1.0, 2.0], 1.0), Err(Error::Validation(_))));
        assert_eq!(rbf_kernel(&x1, &x2, 0.3).unwrap(), rbf_kernel(&x2, &x1, 0.3).unwrap());
    }

    #[test]
    fn constant_targets_stay_inside_tube() {
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = [2.5; 5];
        let m = train_svr(&x, &y, &SvrHyperParams::new(1.0, 0.1, 0.5)).unwrap();
        assert!(m.coef.is_empty());
        assert_eq!(m.bias, 2.5);
        assert_eq!(m.predict(&[17.0]).unwrap(), 2.5);
    }

    #[test]
    fn linear_targets_fit_within_tube() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let x = DMatrix::from_column_slice(12, 1, &xs);
        let y: Vec<f64> = xs.iter().map(|v| 0.3 * v - 0.1).collect();
        let eps = 0.01;
        let m = train_svr(&x, &y, &SvrHyperParams::new(100.0, eps, 1.0)).unwrap();
        let obj = m.training_objective(&x, &y).unwrap();
        assert!(obj.slack.iter().all(|&s| s < 1e-6), "{:?}", obj.slack);
        for (xi, yi) in xs.iter().zip(&y) {
            assert!((m.predict(&[*xi]).unwrap() - yi).abs() <= eps + 1e-5);
        }
    }

    fn random_problem(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0f64..1.0));
        let y = (0..n).map(|i| x.row(i).sum().sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn dual_feasibility_and_tube_certificate() {
        for seed in 0..20 {
            let (x, y) = random_problem(seed, 40, 3);
            let params = SvrHyperParams::new(2.0, 0.05, 0.8);
            let (m, report) = train_svr_with(&x, &y, &params, &SolverOptions::default()).unwrap();
            let sum: f64 = report.coefficients.iter().sum();
            assert!(sum.abs() <= 1e-6 * params.c);
            assert!(report.coefficients.iter().all(|c| c.abs() <= params.c * (1.0 + 1e-12)));
            for (t, &c) in report.coefficients.iter().enumerate() {
                let free = c.abs() > 1e-9 && c.abs() < params.c - 1e-9;
                if free {
                    let xt: Vec<f64> = x.row(t).iter().copied().collect();
                    let resid = (m.predict(&xt).unwrap() - y[t]).abs();
                    assert!((resid - params.epsilon).abs() < 1e-4, "free sample {t}: |r| = {resid}");
                }
            }
        }
    }

    #[test]
    fn objective_never_increases() {
        let (x, y) = random_problem(99, 60, 4);
        let opts = SolverOptions { record_objective: true, ..SolverOptions::default() };
        let (_, report) = train_svr_with(&x, &y, &SvrHyperParams::new(5.0, 0.01, 0.5), &opts).unwrap();
        assert!(report.objective_trace.len() > 2);
        for w in report.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        let last = *report.objective_trace.last().unwrap();
        assert_relative_eq!(last, report.dual_objective, max_relative = 1e-12);
    }

    #[test]
    fn primal_and_dual_objectives_agree() {
        let (x, y) = random_problem(7, 30, 2);
        let params = SvrHyperParams::new(1.0, 0.02, 1.5);
        let opts = SolverOptions { tolerance: 1e-8, ..SolverOptions::default() };
        let (m, report) = train_svr_with(&x, &y, &params, &opts).unwrap();
        let primal = m.training_objective(&x, &y).unwrap().objective;
        assert_relative_eq!(primal, -report.dual_objective, max_relative = 1e-5);
        let gram = gram_matrix(&x, params.gamma);
        assert_relative_eq!(
            dual_objective(&gram, &y, &report.coefficients, params.epsilon),
            report.dual_objective,
            max_relative = 1e-9
        );
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        for seed in 0..5 {
            let (x, _) = random_problem(seed, 25, 3);
            for gamma in [1e-3, 0.1, 10.0] {
                let g = gram_matrix(&x, gamma);
                let min = g.symmetric_eigenvalues().min();
                assert!(min >= -1e-8, "min eigenvalue {min}");
            }
        }
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let (x, y) = random_problem(1, 50, 3);
        let opts = SolverOptions { max_iterations: 3, ..SolverOptions::default() };
        match train_svr_with(&x, &y, &SvrHyperParams::new(10.0, 1e-4, 1.0), &opts) {
            Err(Error::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_input() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, f64::NAN]);
        assert!(matches!(train_svr(&x, &[1.0, 2.0], &SvrHyperParams::default()), Err(Error::Validation(_))));
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert!(train_svr(&x, &[1.0], &SvrHyperParams::default()).is_err());
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(train_svr(&x, &[1.0, 2.0], &SvrHyperParams::new(0.0, 0.1, 1.0)).is_err());
        let m = train_svr(&x, &[1.0, 2.0], &SvrHyperParams::default()).unwrap();
        assert!(m.predict(&[1.0, 2.0]).is_err());
    }
}
