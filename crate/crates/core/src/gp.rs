//! Gaussian process over sensor locations with the exponential kernel
//! `k(x, x') = exp(-(d(x, x') / l_scale)^l_p)`.
//!
//! Distances are measured in the unfolded surface plane and divided by a
//! normalizer (the plate diagonal) before they enter the kernel. All
//! posterior quantities go through a Cholesky factor of
//! `Σ_AA = K_AA + (β⁻¹ + jitter) I`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DeformationDataset, FoldPlan};
use crate::error::{Error, Result};
use crate::plate::Point2;

/// Diagonal jitter added on top of the observation noise.
pub const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpKernelParams {
    pub l_scale: f64,
    /// Distance exponent, in (0, 2].
    pub l_p: f64,
    /// Observation noise variance β⁻¹.
    pub beta_inv: f64,
}

impl Default for GpKernelParams {
    fn default() -> Self {
        Self { l_scale: 0.033, l_p: 1.9, beta_inv: 1e-4 }
    }
}

impl GpKernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_scale.is_finite() && self.l_scale > 0.0) {
            return Err(Error::validation("l_scale must be positive"));
        }
        if !(self.l_p > 0.0 && self.l_p <= 2.0) {
            return Err(Error::validation("l_p must lie in (0, 2]"));
        }
        if !(self.beta_inv.is_finite() && self.beta_inv >= 0.0) {
            return Err(Error::validation("beta_inv must be non-negative"));
        }
        Ok(())
    }
}

/// Surface distance between two points in unfolded coordinates. The
/// surrogate surface is flat, so this is the Euclidean distance.
pub fn geodesic_distance(a: Point2, b: Point2) -> f64 {
    a.distance(&b)
}

/// Kernel value for points already expressed in normalized coordinates.
pub fn exp_kernel(a: Point2, b: Point2, params: &GpKernelParams) -> f64 {
    kernel_of_distance(geodesic_distance(a, b), params)
}

fn kernel_of_distance(d: f64, params: &GpKernelParams) -> f64 {
    (-(d / params.l_scale).powf(params.l_p)).exp()
}

/// Exponential kernel with its coordinate normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpKernel {
    pub params: GpKernelParams,
    /// Physical length that maps to 1 in normalized coordinates (mm).
    pub normalizer: f64,
}

impl ExpKernel {
    pub fn new(params: GpKernelParams, normalizer: f64) -> Result<Self> {
        params.validate()?;
        if !(normalizer.is_finite() && normalizer > 0.0) {
            return Err(Error::validation("kernel normalizer must be positive"));
        }
        Ok(Self { params, normalizer })
    }

    pub fn eval(&self, a: Point2, b: Point2) -> f64 {
        kernel_of_distance(geodesic_distance(a, b) / self.normalizer, &self.params)
    }

    /// Prior variance k(y, y).
    pub fn prior_variance(&self) -> f64 {
        1.0
    }

    /// Variance added to observed sites.
    pub fn noise(&self) -> f64 {
        self.params.beta_inv + JITTER
    }

    pub fn matrix(&self, rows: &[Point2], cols: &[Point2]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.eval(rows[i], cols[j]))
    }

    /// `K_AA + noise I`.
    pub fn observed_covariance(&self, sites: &[Point2]) -> DMatrix<f64> {
        let mut k = self.matrix(sites, sites);
        for i in 0..sites.len() {
            k[(i, i)] += self.noise();
        }
        k
    }
}

fn conditioning_error(matrix: &DMatrix<f64>, context: &str) -> Error {
    let min_eigenvalue = matrix.clone().symmetric_eigenvalues().min();
    Error::Conditioning { context: context.to_string(), min_eigenvalue }
}

pub(crate) fn cholesky(matrix: DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    match Cholesky::new(matrix.clone()) {
        Some(c) => Ok(c),
        None => Err(conditioning_error(&matrix, context)),
    }
}

/// Posterior of the deformation at one query location.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    /// Posterior mean per trial.
    pub mean: Vec<f64>,
    /// Posterior variance, clamped at zero.
    pub variance: f64,
    /// Set when a negative round-off variance was clamped.
    pub clamped: bool,
}

/// GP conditioned on the readings of an observed site set `A`.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: ExpKernel,
    sites: Vec<Point2>,
    /// X_A, one row per observed site, one column per trial.
    values: DMatrix<f64>,
    prior_mean: Vec<f64>,
    /// Lower Cholesky factor of Σ_AA.
    chol: DMatrix<f64>,
    /// Σ_AA⁻¹ (X_A − μ_A).
    weights: DMatrix<f64>,
}

impl GpModel {
    /// Unconditioned model for `n_trials` trials.
    pub fn prior(kernel: ExpKernel, n_trials: usize) -> Self {
        Self {
            kernel,
            sites: Vec::new(),
            values: DMatrix::zeros(0, n_trials),
            prior_mean: Vec::new(),
            chol: DMatrix::zeros(0, 0),
            weights: DMatrix::zeros(0, n_trials),
        }
    }

    /// Conditions on `values` (row per site) at `sites`. The prior mean of
    /// each site is the mean of its row.
    pub fn fit(kernel: ExpKernel, sites: &[Point2], values: &DMatrix<f64>) -> Result<Self> {
        if values.nrows() != sites.len() {
            return Err(Error::validation("one value row per observed site is required"));
        }
        let prior_mean: Vec<f64> = values.row_iter().map(|r| r.mean()).collect();
        Self::fit_with_mean(kernel, sites, values, &prior_mean)
    }

    pub fn fit_with_mean(
        kernel: ExpKernel,
        sites: &[Point2],
        values: &DMatrix<f64>,
        prior_mean: &[f64],
    ) -> Result<Self> {
        if values.nrows() != sites.len() || prior_mean.len() != sites.len() {
            return Err(Error::validation("sites, values and prior means disagree in length"));
        }
        if sites.is_empty() {
            return Ok(Self::prior(kernel, values.ncols()));
        }
        let chol = cholesky(kernel.observed_covariance(sites), "observed covariance is not positive definite")?;
        let centered = DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| values[(i, j)] - prior_mean[i]);
        let weights = chol.solve(&centered);
        Ok(Self {
            kernel,
            sites: sites.to_vec(),
            values: values.clone(),
            prior_mean: prior_mean.to_vec(),
            chol: chol.l(),
            weights,
        })
    }

    pub fn kernel(&self) -> &ExpKernel {
        &self.kernel
    }

    pub fn observed_sites(&self) -> &[Point2] {
        &self.sites
    }

    pub fn n_trials(&self) -> usize {
        self.values.ncols()
    }

    fn cross(&self, query: Point2) -> DVector<f64> {
        DVector::from_iterator(self.sites.len(), self.sites.iter().map(|&s| self.kernel.eval(s, query)))
    }

    /// `L⁻¹ k_Ay`.
    fn whitened(&self, query: Point2) -> DVector<f64> {
        let k = self.cross(query);
        if self.sites.is_empty() {
            return k;
        }
        self.chol
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn posterior_variance(&self, query: Point2) -> f64 {
        let v = self.whitened(query);
        (self.kernel.prior_variance() - v.norm_squared()).max(0.0)
    }

    /// Mean and variance at `query`, whose prior mean is `prior_mean`.
    pub fn posterior(&self, query: Point2, prior_mean: f64) -> Posterior {
        let k = self.cross(query);
        let mean: Vec<f64> = (0..self.n_trials())
            .map(|t| prior_mean + k.dot(&self.weights.column(t)))
            .collect();
        let v = self.whitened(query);
        let raw = self.kernel.prior_variance() - v.norm_squared();
        Posterior { mean, variance: raw.max(0.0), clamped: raw < 0.0 }
    }

    /// New model with one more observed site (block extension of the factor).
    pub fn with_observation(&self, site: Point2, values: &[f64], prior_mean: f64) -> Result<Self> {
        if values.len() != self.n_trials() {
            return Err(Error::validation(format!(
                "expected {} values for the new site, got {}",
                self.n_trials(),
                values.len()
            )));
        }
        let n = self.sites.len();
        let l_row = self.whitened(site);
        let d2 = self.kernel.prior_variance() + self.kernel.noise() - l_row.norm_squared();
        if d2.is_nan() || d2 <= 0.0 {
            let mut sites = self.sites.clone();
            sites.push(site);
            return Err(conditioning_error(
                &self.kernel.observed_covariance(&sites),
                "adding the site makes the covariance singular",
            ));
        }
        let mut chol = DMatrix::zeros(n + 1, n + 1);
        chol.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        for j in 0..n {
            chol[(n, j)] = l_row[j];
        }
        chol[(n, n)] = d2.sqrt();
        let mut sites = self.sites.clone();
        sites.push(site);
        let mut prior = self.prior_mean.clone();
        prior.push(prior_mean);
        let vals = self.values.clone().insert_row(n, 0.0);
        let mut vals = vals;
        for (t, &x) in values.iter().enumerate() {
            vals[(n, t)] = x;
        }
        let centered = DMatrix::from_fn(n + 1, vals.ncols(), |i, j| vals[(i, j)] - prior[i]);
        let y = chol.solve_lower_triangular(&centered).expect("positive diagonal");
        let weights = chol.transpose().solve_upper_triangular(&y).expect("positive diagonal");
        Ok(Self { kernel: self.kernel, sites, values: vals, prior_mean: prior, chol, weights })
    }
}

/// Posterior variances at `queries` given observations at `observed`
/// (data-free; only locations matter).
pub fn posterior_variances(kernel: &ExpKernel, observed: &[Point2], queries: &[Point2]) -> Result<Vec<f64>> {
    if observed.is_empty() {
        return Ok(vec![kernel.prior_variance(); queries.len()]);
    }
    let chol = cholesky(kernel.observed_covariance(observed), "observed covariance is not positive definite")?;
    let cross = kernel.matrix(observed, queries);
    let v = chol.l().solve_lower_triangular(&cross).expect("positive diagonal");
    Ok(v.column_iter().map(|c| (kernel.prior_variance() - c.norm_squared()).max(0.0)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSearchOutcome {
    pub best: GpKernelParams,
    /// Mean held-out negative log-likelihood of the best point.
    pub score: f64,
    /// (params, score) per grid point; `None` where conditioning failed.
    pub table: Vec<(GpKernelParams, Option<f64>)>,
}

/// Cross-validated choice of `(l_scale, l_p)`.
///
/// `folds` partitions the dataset's sensor rows. For each fold the held-out
/// sensors are predicted from the remaining ones for every trial and scored
/// by their Gaussian predictive negative log-likelihood; the grid point with
/// the lowest mean wins, ties toward smaller `l_scale` then smaller `l_p`.
pub fn gp_grid_search(
    data: &DeformationDataset,
    normalizer: f64,
    l_scales: &[f64],
    l_ps: &[f64],
    beta_inv: f64,
    folds: &FoldPlan,
) -> Result<GpSearchOutcome> {
    if l_scales.is_empty() || l_ps.is_empty() {
        return Err(Error::validation("GP grid must be non-empty"));
    }
    if folds.n_trials() != data.n_sensors() {
        return Err(Error::validation("GP folds must partition the sensor sites"));
    }
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let mut points = Vec::new();
    for &ls in &sorted(l_scales) {
        for &lp in &sorted(l_ps) {
            let p = GpKernelParams { l_scale: ls, l_p: lp, beta_inv };
            p.validate()?;
            points.push(p);
        }
    }
    let sites = data.sensor_sites();
    let x = data.x();
    let scores: Vec<Option<f64>> = points
        .par_iter()
        .map(|p| {
            let kernel = ExpKernel::new(*p, normalizer).ok()?;
            let mut total = 0.0;
            let mut count = 0usize;
            for f in 0..folds.k {
                let train = folds.train_indices(f);
                let test = folds.test_indices(f);
                let ts: Vec<Point2> = train.iter().map(|&i| sites[i]).collect();
                let qs: Vec<Point2> = test.iter().map(|&i| sites[i]).collect();
                let values = x.select_rows(train.iter());
                let model = GpModel::fit(kernel, &ts, &values).ok()?;
                for (q, &i) in qs.iter().zip(&test) {
                    let row = x.row(i);
                    let post = model.posterior(*q, row.mean());
                    let s2 = post.variance + kernel.noise();
                    for (t, m) in post.mean.iter().enumerate() {
                        let r = row[t] - m;
                        total += 0.5 * (2.0 * std::f64::consts::PI * s2).ln() + r * r / (2.0 * s2);
                        count += 1;
                    }
                }
            }
            Some(total / count as f64)
        })
        .collect();
    let mut best: Option<(GpKernelParams, f64)> = None;
    for (p, s) in points.iter().zip(&scores) {
        if let Some(s) = *s {
            if s.is_finite() && best.is_none_or(|(_, b)| s < b) {
                best = Some((*p, s));
            }
        }
    }
    let (best, score) = best.ok_or_else(|| Error::Conditioning {
        context: "every GP grid point failed to condition".into(),
        min_eigenvalue: f64::NAN,
    })?;
    Ok(GpSearchOutcome { best, score, table: points.into_iter().zip(scores).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kernel(l: f64, p: f64, noise: f64) -> ExpKernel {
        ExpKernel::new(GpKernelParams { l_scale: l, l_p: p, beta_inv: noise }, 1.0).unwrap()
    }

    #[test]
    fn distance_properties() {
        let a = Point2::new(1.0, 2.0);
        let b = Point2::new(4.0, 6.0);
        assert_eq!(geodesic_distance(a, a), 0.0);
        assert_eq!(geodesic_distance(a, b), 5.0);
        assert_eq!(geodesic_distance(a, b), geodesic_distance(b, a));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let mut p = || Point2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let (x, y, z) = (p(), p(), p());
            assert!(geodesic_distance(x, z) <= geodesic_distance(x, y) + geodesic_distance(y, z) + 1e-12);
        }
    }

    #[test]
    fn kernel_values() {
        let p = GpKernelParams { l_scale: 0.25, l_p: 1.3, beta_inv: 0.0 };
        assert_eq!(exp_kernel(Point2::new(0.3, 0.3), Point2::new(0.3, 0.3), &p), 1.0);
        let k = exp_kernel(Point2::new(0.0, 0.0), Point2::new(0.15, 0.2), &p);
        assert_relative_eq!(k, (-1.0f64).exp(), max_relative = 1e-14);
        let reported = GpKernelParams::default();
        reported.validate().unwrap();
        let profile: Vec<f64> = (0..20).map(|i| exp_kernel(Point2::new(0.0, 0.0), Point2::new(0.005 * i as f64, 0.0), &reported)).collect();
        assert!(profile.windows(2).all(|w| w[1] < w[0]));
        assert!(GpKernelParams { l_p: 2.5, ..reported }.validate().is_err());
        assert!(GpKernelParams { l_scale: 0.0, ..reported }.validate().is_err());
    }

    #[test]
    fn empty_model_returns_prior() {
        let m = GpModel::prior(kernel(0.2, 2.0, 1e-4), 3);
        let post = m.posterior(Point2::new(0.4, 0.1), 1.5);
        assert_eq!(post.mean, vec![1.5; 3]);
        assert_eq!(post.variance, 1.0);
    }

    #[test]
    fn noiseless_interpolation_limit() {
        let k = ExpKernel::new(GpKernelParams { l_scale: 0.3, l_p: 1.5, beta_inv: 0.0 }, 1.0).unwrap();
        let sites = [Point2::new(0.0, 0.0), Point2::new(0.5, 0.0), Point2::new(0.2, 0.4)];
        let values = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 0.3, -1.0, 4.0]);
        let m = GpModel::fit(k, &sites, &values).unwrap();
        for (i, s) in sites.iter().enumerate() {
            let post = m.posterior(*s, values.row(i).mean());
            assert!(post.variance < 1e-6);
            for t in 0..2 {
                assert!((post.mean[t] - values[(i, t)]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn two_observation_closed_form() {
        let k = kernel(0.4, 2.0, 0.01);
        let a = Point2::new(0.0, 0.0);
        let b = Point2::new(0.3, 0.1);
        let y = Point2::new(0.1, 0.2);
        let values = DMatrix::from_row_slice(2, 1, &[1.2, -0.7]);
        let mu = [0.2, -0.1];
        let m = GpModel::fit_with_mean(k, &[a, b], &values, &mu).unwrap();
        // explicit 2x2 inverse
        let n = k.noise();
        let (s11, s12, s22) = (1.0 + n, k.eval(a, b), 1.0 + n);
        let det = s11 * s22 - s12 * s12;
        let inv = [[s22 / det, -s12 / det], [-s12 / det, s11 / det]];
        let ky = [k.eval(a, y), k.eval(b, y)];
        let r = [1.2 - mu[0], -0.7 - mu[1]];
        let w = [inv[0][0] * r[0] + inv[0][1] * r[1], inv[1][0] * r[0] + inv[1][1] * r[1]];
        let mean = 0.05 + ky[0] * w[0] + ky[1] * w[1];
        let quad = ky[0] * (inv[0][0] * ky[0] + inv[0][1] * ky[1]) + ky[1] * (inv[1][0] * ky[0] + inv[1][1] * ky[1]);
        let post = m.posterior(y, 0.05);
        assert!((post.mean[0] - mean).abs() < 1e-10);
        assert!((post.variance - (1.0 - quad)).abs() < 1e-10);
    }

    #[test]
    fn incremental_matches_batch_and_order() {
        let k = kernel(0.2, 1.7, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sites: Vec<Point2> = (0..6).map(|_| Point2::new(rng.random(), rng.random())).collect();
        let values = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let batch = GpModel::fit(k, &sites, &values).unwrap();
        let mut inc = GpModel::prior(k, 4);
        for (i, s) in sites.iter().enumerate() {
            let row: Vec<f64> = values.row(i).iter().copied().collect();
            inc = inc.with_observation(*s, &row, values.row(i).mean()).unwrap();
        }
        let order = [3, 0, 5, 1, 4, 2];
        let perm_sites: Vec<Point2> = order.iter().map(|&i| sites[i]).collect();
        let permuted = GpModel::fit(k, &perm_sites, &values.select_rows(order.iter())).unwrap();
        let q = Point2::new(0.4, 0.6);
        let (pb, pi, pp) = (batch.posterior(q, 0.0), inc.posterior(q, 0.0), permuted.posterior(q, 0.0));
        for t in 0..4 {
            assert!((pb.mean[t] - pi.mean[t]).abs() < 1e-10);
            assert!((pb.mean[t] - pp.mean[t]).abs() < 1e-10);
        }
        assert!((pb.variance - pi.variance).abs() < 1e-10);
    }

    #[test]
    fn singular_covariance_reports_eigenvalue() {
        let k = ExpKernel { params: GpKernelParams { l_scale: 0.3, l_p: 2.0, beta_inv: 0.0 }, normalizer: 1.0 };
        let s = Point2::new(0.2, 0.2);
        // duplicate site, zero noise apart from jitter is still PD; force failure via a
        // third near-duplicate under a smooth kernel is fragile, so check the error path directly
        let err = conditioning_error(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), "test");
        match err {
            Error::Conditioning { min_eigenvalue, .. } => assert!((min_eigenvalue + 1.0).abs() < 1e-12),
            _ => unreachable!(),
        }
        assert!(GpModel::fit(k, &[s, s], &DMatrix::zeros(2, 1)).is_ok());
    }

    #[test]
    fn grid_search_recovers_length_scale() {
        // sample functions from the kernel on a 1-D grid and look for the generating scale
        let truth = GpKernelParams { l_scale: 0.1, l_p: 1.5, beta_inv: 1e-4 };
        let k = ExpKernel::new(truth, 1.0).unwrap();
        let sites: Vec<Point2> = (0..60).map(|i| Point2::new(i as f64 / 59.0, 0.0)).collect();
        let chol = Cholesky::new(k.observed_covariance(&sites)).unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let m = 150;
        let normals = DMatrix::from_fn(60, m, |_, _| {
            // Box-Muller
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        let x = &chol * normals;
        let trials = (0..m).map(|j| crate::plate::ForceTrial::new(j as f64, 0.0, 1.0)).collect();
        let data = DeformationDataset::new(x, sites, trials, Default::default()).unwrap();
        let folds = crate::dataset::make_folds(60, 5, 3).unwrap();
        let grid = [0.025, 0.05, 0.1, 0.2, 0.4];
        let out = gp_grid_search(&data, 1.0, &grid, &[1.5], 1e-4, &folds).unwrap();
        let pos = grid.iter().position(|&g| g == out.best.l_scale).unwrap();
        assert!((1..=3).contains(&pos), "recovered l_scale {}", out.best.l_scale);
        let single = gp_grid_search(&data, 1.0, &[0.2], &[1.0], 1e-4, &folds).unwrap();
        assert_eq!(single.best.l_scale, 0.2);
        assert_eq!(single.best.l_p, 1.0);
    }
}
