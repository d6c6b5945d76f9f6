//! PCA basis, QR column pivoting, and linear reconstruction from a few rows.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use super::{Method, SelectionResult};
use crate::error::{Error, Result};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Principal components over locations (rows of the data matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// Orthonormal columns, strongest first.
    pub components: DMatrix<f64>,
    /// Variance captured by each component, non-increasing.
    pub explained_variance: Vec<f64>,
}

impl Pca {
    pub fn rank(&self) -> usize {
        let top = self.explained_variance.first().copied().unwrap_or(0.0);
        // variances are squared singular values
        self.explained_variance.iter().filter(|&&v| v > top * RANK_TOLERANCE * RANK_TOLERANCE).count()
    }

    /// Cumulative explained-variance fraction after each component.
    pub fn cumulative_ratio(&self) -> Vec<f64> {
        let total: f64 = self.explained_variance.iter().sum();
        let mut acc = 0.0;
        self.explained_variance
            .iter()
            .map(|v| {
                acc += v;
                acc / total
            })
            .collect()
    }

    pub fn top(&self, k: usize) -> DMatrix<f64> {
        self.components.columns(0, k).into_owned()
    }
}

/// PCA of `x` (locations × trials, rows already centred/standardized).
pub fn pca(x: &DMatrix<f64>) -> Result<Pca> {
    if x.ncols() < 2 {
        return Err(Error::validation("PCA needs at least 2 trials"));
    }
    if x.nrows() == 0 || x.iter().all(|&v| v == 0.0) {
        return Err(Error::validation("PCA of all-zero data is undefined"));
    }
    let svd = SVD::new(x.clone(), true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let components = u.select_columns(order.iter());
    let m = x.ncols() as f64;
    let explained_variance = order.iter().map(|&i| svd.singular_values[i].powi(2) / m).collect();
    Ok(Pca { components, explained_variance })
}

/// Result of a column-pivoted QR factorization `B P = Q R`.
#[derive(Debug, Clone, PartialEq)]
pub struct QrPivoting {
    /// Column order; the first `min(rows, cols)` entries are greedy pivots.
    pub permutation: Vec<usize>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Householder QR with greedy column pivoting.
///
/// Each step takes the column with the largest residual norm; columns whose
/// norms agree to within 1e-10 (relative) go by original index. Once the
/// rows are exhausted the remaining columns follow in index order.
pub fn qr_column_pivoting(b: &DMatrix<f64>) -> Result<QrPivoting> {
    let (m, n) = b.shape();
    if m == 0 || n == 0 {
        return Err(Error::validation("QR pivoting needs a non-empty matrix"));
    }
    let mut a = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut q = DMatrix::<f64>::identity(m, m);
    let steps = m.min(n);
    for k in 0..steps {
        let norms: Vec<f64> = (k..n).map(|j| a.view((k, j), (m - k, 1)).norm()).collect();
        let top = norms.iter().cloned().fold(0.0, f64::max);
        let pick = (k..n)
            .filter(|&j| norms[j - k] >= top * (1.0 - 1e-10))
            .min_by_key(|&j| perm[j])
            .expect("at least one column remains");
        a.swap_columns(k, pick);
        perm.swap(k, pick);

        // reflector for a[k.., k]
        let x = a.view((k, k), (m - k, 1)).into_owned();
        let alpha = x.norm();
        if alpha == 0.0 {
            continue;
        }
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = x;
        v[0] += sign * alpha;
        let vn = v.norm_squared();
        // A <- (I - 2vv'/v'v) A on rows k..
        let mut block = a.view_mut((k, k), (m - k, n - k));
        let w = v.transpose() * &block;
        block -= (2.0 / vn) * &v * w;
        // Q <- Q (I - 2vv'/v'v)
        let mut qb = q.view_mut((0, k), (m, m - k));
        let w = &qb * &v;
        qb -= (2.0 / vn) * w * v.transpose();
    }
    // tail in index order
    let mut tail = perm[steps..].to_vec();
    tail.sort_unstable();
    perm.truncate(steps);
    perm.extend(tail);
    let bp = b.select_columns(perm.iter());
    let mut r = q.transpose() * bp;
    for j in 0..n {
        for i in (j + 1)..m {
            r[(i, j)] = 0.0;
        }
    }
    Ok(QrPivoting { permutation: perm, q, r })
}

/// `σ_max / σ_min`, or `+∞` when `σ_min < 1e-12 σ_max`.
pub fn condition_number(op: &DMatrix<f64>) -> Result<f64> {
    if op.is_empty() {
        return Err(Error::validation("condition number of an empty operator"));
    }
    let s = op.clone().singular_values();
    let max = s.max();
    let min = s.min();
    if max == 0.0 || min < 1e-12 * max {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// Reconstructs every location from readings at `rows` using the basis `psi`
/// (locations × k). `readings` has one row per selected location and one
/// column per trial.
pub fn cs_reconstruct(readings: &DMatrix<f64>, psi: &DMatrix<f64>, rows: &[usize]) -> Result<DMatrix<f64>> {
    let k = psi.ncols();
    if rows.len() < k {
        return Err(Error::validation(format!("{} readings cannot identify {k} coefficients", rows.len())));
    }
    if readings.nrows() != rows.len() {
        return Err(Error::validation("one reading row per selected location is required"));
    }
    crate::dataset::check_indices(rows, psi.nrows(), "location")?;
    let op = psi.select_rows(rows.iter());
    let c = condition_number(&op)?;
    if !c.is_finite() {
        return Err(Error::Conditioning {
            context: "sampling operator is numerically singular".into(),
            min_eigenvalue: 0.0,
        });
    }
    let svd = SVD::new(op, true, true);
    let alpha = svd.solve(readings, 0.0).map_err(|e| Error::domain(e.to_string()))?;
    Ok(psi * alpha)
}

pub fn relative_frobenius_error(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (estimate - truth).norm() / truth.norm()
}

/// Pivot rows for the top-`k` components.
fn pivots_for(p: &Pca, k: usize) -> Result<Vec<usize>> {
    let b = p.top(k).transpose();
    let qr = qr_column_pivoting(&b)?;
    Ok(qr.permutation[..k].to_vec())
}

/// Relative reconstruction error of `x` from `k` QR-pivoted rows, for
/// `k = 1..=max_k`.
pub fn compression_curve(x: &DMatrix<f64>, max_k: usize) -> Result<Vec<f64>> {
    let p = pca(x)?;
    let max_k = max_k.min(p.rank());
    (1..=max_k)
        .map(|k| {
            let rows = pivots_for(&p, k)?;
            let est = cs_reconstruct(&x.select_rows(rows.iter()), &p.top(k), &rows)?;
            Ok(relative_frobenius_error(&est, x))
        })
        .collect()
}

/// Smallest `k` whose QR-pivoted reconstruction error is at most `tolerance`.
///
/// Scans `k` upwards: with as many sensors as components the error is not
/// monotone in `k` (the tail aliases through the inverted operator), so
/// bisection could skip the first sufficient `k`.
pub fn smallest_sufficient_k(x: &DMatrix<f64>, tolerance: f64) -> Result<(usize, Vec<usize>)> {
    let p = pca(x)?;
    let mut last = f64::NAN;
    for k in 1..=p.rank() {
        let rows = pivots_for(&p, k)?;
        let est = cs_reconstruct(&x.select_rows(rows.iter()), &p.top(k), &rows)?;
        last = relative_frobenius_error(&est, x);
        if last <= tolerance {
            return Ok((k, rows));
        }
    }
    Err(Error::validation(format!(
        "even {} components leave a reconstruction error of {last:.3e}",
        p.rank()
    )))
}

/// For each budget `i`, pivots on the top-`i` components. `x` holds the
/// candidate rows (standardized); `candidates[r]` is the dataset index of
/// row `r`. Scores are condition numbers of the selected `i × i` operator.
pub fn pca_qr_select(x: &DMatrix<f64>, candidates: &[usize], budgets: &[usize]) -> Result<SelectionResult> {
    if x.nrows() != candidates.len() {
        return Err(Error::validation("one data row per candidate is required"));
    }
    if budgets.is_empty() || budgets.contains(&0) {
        return Err(Error::validation("budgets must be positive"));
    }
    let p = pca(x)?;
    let rank = p.rank();
    let mut out_budgets = Vec::new();
    let mut selections = Vec::new();
    let mut scores = Vec::new();
    let mut diagnostics = Vec::new();
    let mut sorted = budgets.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &k in &sorted {
        if k > rank {
            diagnostics.push(format!("budget {k} exceeds the data rank {rank}; attainable budget reduced"));
            continue;
        }
        let rows = pivots_for(&p, k)?;
        let op = p.top(k).select_rows(rows.iter());
        scores.push(condition_number(&op)?);
        selections.push(rows.iter().map(|&r| candidates[r]).collect());
        out_budgets.push(k);
    }
    Ok(SelectionResult {
        method: Method::PcaQr,
        budgets: out_budgets,
        selections,
        scores,
        score_spread: Vec::new(),
        diagnostics,
        config: serde_json::json!({ "rank": rank, "n_candidates": candidates.len() }),
        seed: 0,
    })
}
