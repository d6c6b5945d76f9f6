//! Independent reference computations used by the integration suites.
//!
//! Nothing here calls into the solver, Cholesky, SVD or greedy code under
//! test: every oracle takes a different route to the same quantity.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use sparsetouch::gp::ExpKernel;
use sparsetouch::Point2;

/// Exact minimum of the ε-SVR dual
/// `½ cᵀKc − yᵀc + ε‖c‖₁` subject to `Σc = 0`, `|c| ≤ C`.
///
/// Enumerates every assignment of each coefficient to one of
/// {−C, 0, +C, free positive, free negative}; for each pattern the
/// equality-constrained QP over the free coefficients is solved through its
/// KKT system, and feasible solutions compete on objective value. The
/// problem is convex, so the best feasible stationary point is the optimum.
pub fn svr_dual_bruteforce(k: &DMatrix<f64>, y: &[f64], c: f64, eps: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let total = 5usize.pow(n as u32);
    let mut state = vec![0u8; n];
    for code in 0..total {
        let mut x = code;
        for s in state.iter_mut() {
            *s = (x % 5) as u8;
            x /= 5;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] >= 3).collect();
        let mut coef = vec![0.0; n];
        for i in 0..n {
            coef[i] = match state[i] {
                0 => 0.0,
                1 => c,
                2 => -c,
                _ => 0.0,
            };
        }
        let bound_sum: f64 = coef.iter().sum();
        if free.is_empty() {
            if bound_sum.abs() > 1e-12 {
                continue;
            }
        } else {
            let f = free.len();
            let mut a = DMatrix::zeros(f + 1, f + 1);
            let mut rhs = DVector::zeros(f + 1);
            for (r, &i) in free.iter().enumerate() {
                let sign = if state[i] == 3 { 1.0 } else { -1.0 };
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = k[(i, j)];
                }
                a[(r, f)] = 1.0;
                a[(f, r)] = 1.0;
                let kb: f64 = (0..n).map(|j| k[(i, j)] * coef[j]).sum();
                rhs[r] = y[i] - eps * sign - kb;
            }
            rhs[f] = -bound_sum;
            let Some(sol) = a.lu().solve(&rhs) else { continue };
            let mut ok = true;
            for (r, &i) in free.iter().enumerate() {
                let v = sol[r];
                let inside = if state[i] == 3 { v >= -1e-12 && v <= c + 1e-12 } else { v <= 1e-12 && v >= -c - 1e-12 };
                ok &= inside;
                coef[i] = v.clamp(-c, c);
            }
            if !ok {
                continue;
            }
        }
        let obj = dual_value(k, y, &coef, eps);
        if obj < best.0 {
            best = (obj, coef);
        }
    }
    best
}

/// Plain double loop; no shared code with the library's objective.
pub fn dual_value(k: &DMatrix<f64>, y: &[f64], coef: &[f64], eps: f64) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += coef[i] * coef[j] * k[(i, j)];
        }
    }
    0.5 * quad - (0..n).map(|i| y[i] * coef[i]).sum::<f64>() + eps * coef.iter().map(|c| c.abs()).sum::<f64>()
}

/// RBF Gram matrix straight from the definition.
pub fn rbf_gram(x: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.nrows(), |i, j| {
        let d2: f64 = (0..x.ncols()).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum();
        (-gamma * d2).exp()
    })
}

/// GP posterior through an explicit inverse of Σ_AA.
pub fn gp_dense(
    kernel: &ExpKernel,
    sites: &[Point2],
    values: &[f64],
    prior_mean: &[f64],
    query: Point2,
    query_mean: f64,
) -> (f64, f64) {
    let n = sites.len();
    let noise = kernel.params.beta_inv + sparsetouch::gp::JITTER;
    let k = |a: Point2, b: Point2| {
        let d = ((a.u - b.u).powi(2) + (a.v - b.v).powi(2)).sqrt() / kernel.normalizer;
        (-(d / kernel.params.l_scale).powf(kernel.params.l_p)).exp()
    };
    let sigma = DMatrix::from_fn(n, n, |i, j| k(sites[i], sites[j]) + if i == j { noise } else { 0.0 });
    let inv = sigma.try_inverse().expect("oracle covariance invertible");
    let ky = DVector::from_fn(n, |i, _| k(sites[i], query));
    let r = DVector::from_fn(n, |i, _| values[i] - prior_mean[i]);
    let mean = query_mean + (ky.transpose() * &inv * r)[(0, 0)];
    let var = 1.0 - (ky.transpose() * &inv * &ky)[(0, 0)];
    (mean, var)
}

/// Noisy-observation covariance over arbitrary sites.
pub fn noisy_cov(kernel: &ExpKernel, sites: &[Point2]) -> DMatrix<f64> {
    let noise = kernel.params.beta_inv + sparsetouch::gp::JITTER;
    DMatrix::from_fn(sites.len(), sites.len(), |i, j| {
        kernel.eval(sites[i], sites[j]) + if i == j { noise } else { 0.0 }
    })
}

/// Latent posterior variance at `y` given noisy observations at `given`.
pub fn conditional_variance(kernel: &ExpKernel, y: Point2, given: &[Point2]) -> f64 {
    if given.is_empty() {
        return 1.0;
    }
    let inv = noisy_cov(kernel, given).try_inverse().expect("invertible");
    let ky = DVector::from_fn(given.len(), |i, _| kernel.eval(given[i], y));
    1.0 - (ky.transpose() * inv * &ky)[(0, 0)]
}

/// log det via eigenvalues of a symmetric positive definite matrix.
pub fn log_det(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().iter().map(|l| l.ln()).sum()
}

/// Gaussian mutual information between the noisy readings at `a` and at `b`.
pub fn mutual_information(kernel: &ExpKernel, a: &[Point2], b: &[Point2]) -> f64 {
    let mut joint = a.to_vec();
    joint.extend_from_slice(b);
    0.5 * (log_det(&noisy_cov(kernel, a)) + log_det(&noisy_cov(kernel, b)) - log_det(&noisy_cov(kernel, &joint)))
}

/// Covariance spectrum of the rows of `x` from a symmetric eigensolver.
pub fn covariance_spectrum(x: &DMatrix<f64>) -> Vec<f64> {
    let cov = x * x.transpose() / x.ncols() as f64;
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Condition number from the eigenvalues of `AᵀA`.
pub fn condition_via_gram(a: &DMatrix<f64>) -> f64 {
    let g = if a.nrows() >= a.ncols() { a.transpose() * a } else { a * a.transpose() };
    let ev = g.symmetric_eigenvalues();
    (ev.max() / ev.min()).sqrt()
}

/// Navier double series for the deflection of a simply supported plate,
/// written out directly.
pub fn navier_deflection(a: f64, b: f64, d: f64, load: (f64, f64, f64), q: (f64, f64), terms: usize) -> f64 {
    use std::f64::consts::PI;
    let (u0, v0, p) = load;
    let mut s = 0.0;
    for m in 1..=terms {
        let mf = m as f64;
        let su = (mf * PI * u0 / a).sin() * (mf * PI * q.0 / a).sin();
        for n in 1..=terms {
            let nf = n as f64;
            let sv = (nf * PI * v0 / b).sin() * (nf * PI * q.1 / b).sin();
            let den = ((mf / a).powi(2) + (nf / b).powi(2)).powi(2);
            s += su * sv / den;
        }
    }
    4.0 * p / (PI.powi(4) * d * a * b) * s
}

/// Single-series (Lévy) central deflection coefficient of a square plate
/// under a central point load, `w = α P a² / D`.
pub fn levy_center_coefficient(terms: usize) -> f64 {
    use std::f64::consts::PI;
    let mut s = 0.0;
    for k in 0..terms {
        let m = (2 * k + 1) as f64;
        let al = m * PI / 2.0;
        s += (al.tanh() - al / al.cosh().powi(2)) / m.powi(3);
    }
    s / (2.0 * PI.powi(3))
}

/// First index of the largest finite value.
fn first_argmax(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if v.is_finite() && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Entropy step by brute force: the feasible site with the largest latent
/// variance given noisy readings at `chosen`.
pub fn exhaustive_entropy_pick(kernel: &ExpKernel, sites: &[Point2], chosen: &[usize], feasible: &[usize]) -> usize {
    let given: Vec<Point2> = chosen.iter().map(|&i| sites[i]).collect();
    first_argmax(
        feasible
            .iter()
            .filter(|i| !chosen.contains(i))
            .map(|&i| (i, conditional_variance(kernel, sites[i], &given))),
    )
    .expect("a feasible site remains")
}

/// Mutual-information ratio step by brute force: every variance comes from
/// a fresh dense inverse.
pub fn exhaustive_ratio_pick(
    kernel: &ExpKernel,
    sites: &[Point2],
    chosen: &[usize],
    feasible: &[usize],
    domain: &[usize],
) -> usize {
    let given: Vec<Point2> = chosen.iter().map(|&i| sites[i]).collect();
    first_argmax(feasible.iter().filter(|i| !chosen.contains(i)).map(|&y| {
        let rest: Vec<Point2> = domain.iter().filter(|&&d| d != y && !chosen.contains(&d)).map(|&d| sites[d]).collect();
        let num = conditional_variance(kernel, sites[y], &given);
        let den = conditional_variance(kernel, sites[y], &rest);
        (y, if den > 1e-12 { num / den } else { f64::NAN })
    }))
    .expect("a feasible site remains")
}

/// Gain step by brute force: the site maximizing
/// `I(A ∪ y; D ∖ (A ∪ y)) − I(A; D ∖ A)` through log-determinants.
pub fn exhaustive_gain_pick(
    kernel: &ExpKernel,
    sites: &[Point2],
    chosen: &[usize],
    feasible: &[usize],
    domain: &[usize],
) -> usize {
    let f = |a: &[usize]| {
        let inside: Vec<Point2> = a.iter().map(|&i| sites[i]).collect();
        let outside: Vec<Point2> = domain.iter().filter(|d| !a.contains(d)).map(|&d| sites[d]).collect();
        mutual_information(kernel, &inside, &outside)
    };
    let base = f(chosen);
    first_argmax(feasible.iter().filter(|i| !chosen.contains(i)).map(|&y| {
        let mut a = chosen.to_vec();
        a.push(y);
        (y, f(&a) - base)
    }))
    .expect("a feasible site remains")
}

/// Relative Frobenius error of reconstructing every row of `x` from the
/// rows `rows`, using the top-`rows.len()` eigenvectors of `x xᵀ` as basis
/// and a dense LU solve per trial.
pub fn reconstruction_error(x: &DMatrix<f64>, rows: &[usize]) -> f64 {
    let k = rows.len();
    let eig = (x * x.transpose()).symmetric_eigen();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let basis = DMatrix::from_fn(x.nrows(), k, |i, j| eig.eigenvectors[(i, order[j])]);
    let op = DMatrix::from_fn(k, k, |i, j| basis[(rows[i], j)]);
    let lu = op.lu();
    let mut err = 0.0;
    for t in 0..x.ncols() {
        let b = DVector::from_fn(k, |i, _| x[(rows[i], t)]);
        let a = lu.solve(&b).expect("selected operator is invertible");
        let est = &basis * a;
        err += (0..x.nrows()).map(|i| (est[i] - x[(i, t)]).powi(2)).sum::<f64>();
    }
    (err / x.norm_squared()).sqrt()
}
