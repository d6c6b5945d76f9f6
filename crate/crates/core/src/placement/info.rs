//! Model-based selectors driven only by GP posterior variances.

use nalgebra::DMatrix;

use super::{argmax_first, Method, SelectionGoal, SelectionResult};
use crate::dataset::check_indices;
use crate::error::{Error, Result};
use crate::gp::{cholesky, ExpKernel};
use crate::plate::Point2;

/// Denominator variances below this mark a near-deterministic site.
const MIN_CONDITIONAL_VARIANCE: f64 = 1e-12;

fn sorted_unique(idx: &[usize], len: usize, what: &str) -> Result<Vec<usize>> {
    check_indices(idx, len, what)?;
    let mut v = idx.to_vec();
    v.sort_unstable();
    let n = v.len();
    v.dedup();
    if v.len() != n {
        return Err(Error::validation(format!("duplicate {what} indices")));
    }
    if v.is_empty() {
        return Err(Error::validation(format!("empty {what} set")));
    }
    Ok(v)
}

/// Posterior variances over a fixed query set, updated one observation at a
/// time. Keeps `W = L⁻¹ K_{A,Q}` row by row.
struct VarianceTracker<'a> {
    kernel: &'a ExpKernel,
    queries: Vec<Point2>,
    rows: Vec<Vec<f64>>,
    variance: Vec<f64>,
}

impl<'a> VarianceTracker<'a> {
    fn new(kernel: &'a ExpKernel, queries: Vec<Point2>) -> Self {
        let variance = vec![kernel.prior_variance(); queries.len()];
        Self { kernel, queries, rows: Vec::new(), variance }
    }

    /// Conditions on query `q` itself being observed (with noise).
    fn observe(&mut self, q: usize) -> Result<()> {
        let d2 = self.variance[q] + self.kernel.noise();
        if d2.is_nan() || d2 <= 0.0 {
            return Err(Error::Conditioning {
                context: "selected site makes the covariance singular".into(),
                min_eigenvalue: d2,
            });
        }
        let d = d2.sqrt();
        let l: Vec<f64> = self.rows.iter().map(|r| r[q]).collect();
        let site = self.queries[q];
        let row: Vec<f64> = (0..self.queries.len())
            .map(|v| {
                let mut s = self.kernel.eval(site, self.queries[v]);
                for (lr, r) in l.iter().zip(&self.rows) {
                    s -= lr * r[v];
                }
                s / d
            })
            .collect();
        for (var, w) in self.variance.iter_mut().zip(&row) {
            *var -= w * w;
        }
        self.rows.push(row);
        Ok(())
    }

    fn variance(&self, q: usize) -> f64 {
        self.variance[q].max(0.0)
    }
}

/// Greedy maximum-entropy placement over the feasible set.
///
/// Each step picks the unselected feasible site of largest posterior
/// variance given the sites already chosen. The score is the Gaussian
/// entropy `½ ln(2πe σ²)` of the pick.
pub fn entropy_select(
    kernel: &ExpKernel,
    sites: &[Point2],
    feasible: &[usize],
    goal: &SelectionGoal,
) -> Result<SelectionResult> {
    let v = sorted_unique(feasible, sites.len(), "feasible site")?;
    goal.validate(v.len())?;
    let mut tracker = VarianceTracker::new(kernel, v.iter().map(|&i| sites[i]).collect());
    let mut taken = vec![false; v.len()];
    let mut order = Vec::new();
    let mut scores = Vec::new();
    for _ in 0..goal.max_budget {
        let pick = argmax_first((0..v.len()).map(|q| if taken[q] { f64::NAN } else { tracker.variance(q) }))
            .expect("budget does not exceed the feasible set");
        let s2 = tracker.variance(pick);
        scores.push(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s2).ln());
        tracker.observe(pick)?;
        taken[pick] = true;
        order.push(v[pick]);
    }
    let config = serde_json::json!({ "kernel": kernel, "feasible": v.len() });
    Ok(SelectionResult::from_order(Method::Entropy, order, scores, Vec::new(), config, 0))
}

/// Greedy mutual-information placement.
///
/// Picks the feasible site maximizing `σ²_{y|A} / σ²_{y|B(y)}` with
/// `B(y) = D ∖ (A ∪ {y})`; `D` may include sites that can never host a
/// sensor. The denominators come from the precision matrix of `D ∖ A`,
/// which is downdated after each pick. The score is the log ratio.
pub fn mi_select(
    kernel: &ExpKernel,
    sites: &[Point2],
    feasible: &[usize],
    domain: &[usize],
    goal: &SelectionGoal,
) -> Result<SelectionResult> {
    let v = sorted_unique(feasible, sites.len(), "feasible site")?;
    let d = sorted_unique(domain, sites.len(), "domain site")?;
    goal.validate(v.len())?;
    // position of each feasible site inside the domain list
    let v_in_d: Vec<usize> = v
        .iter()
        .map(|i| d.binary_search(i).map_err(|_| Error::validation(format!("feasible site {i} is outside the domain"))))
        .collect::<Result<_>>()?;

    let d_sites: Vec<Point2> = d.iter().map(|&i| sites[i]).collect();
    let chol = cholesky(kernel.observed_covariance(&d_sites), "domain covariance is not positive definite")?;
    // precision over the remaining set S = D \ A, indexed by domain position
    let mut precision: DMatrix<f64> = chol.inverse();
    let mut remaining: Vec<usize> = (0..d.len()).collect();

    let mut tracker = VarianceTracker::new(kernel, v.iter().map(|&i| sites[i]).collect());
    let mut taken = vec![false; v.len()];
    let mut flagged = vec![false; v.len()];
    let mut order = Vec::new();
    let mut scores = Vec::new();
    let mut diagnostics = Vec::new();
    for step in 0..goal.max_budget {
        let ratios: Vec<f64> = (0..v.len())
            .map(|q| {
                if taken[q] {
                    return f64::NAN;
                }
                let pos = remaining.binary_search(&v_in_d[q]).expect("unselected sites stay in S");
                let denom = 1.0 / precision[(pos, pos)] - kernel.noise();
                if denom < MIN_CONDITIONAL_VARIANCE {
                    if !flagged[q] {
                        flagged[q] = true;
                        diagnostics.push(format!(
                            "step {}: site {} skipped, conditional variance {denom:.3e} given the rest of the domain",
                            step + 1,
                            v[q]
                        ));
                    }
                    return f64::NAN;
                }
                tracker.variance(q) / denom
            })
            .collect();
        let pick = match argmax_first(ratios.iter().copied()) {
            Some(p) => p,
            None => {
                let p = (0..v.len()).find(|&q| !taken[q]).expect("budget does not exceed the feasible set");
                diagnostics.push(format!("step {}: every ratio undefined, took site {}", step + 1, v[p]));
                p
            }
        };
        scores.push(ratios[pick].ln());
        tracker.observe(pick)?;
        taken[pick] = true;
        order.push(v[pick]);

        // drop the pick from S: P' = P_rr - P_ry P_yr / P_yy
        let pos = remaining.binary_search(&v_in_d[pick]).expect("pick is in S");
        let pyy = precision[(pos, pos)];
        let col = precision.column(pos).into_owned();
        precision -= (&col * col.transpose()) / pyy;
        precision = precision.remove_row(pos).remove_column(pos);
        remaining.remove(pos);
    }
    let config = serde_json::json!({ "kernel": kernel, "feasible": v.len(), "domain": d.len() });
    Ok(SelectionResult::from_order(Method::Mi, order, scores, diagnostics, config, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{posterior_variances, GpKernelParams};

    fn segment(n: usize) -> Vec<Point2> {
        (0..n).map(|i| Point2::new(i as f64 / (n - 1) as f64, 0.0)).collect()
    }

    fn kernel(l: f64) -> ExpKernel {
        ExpKernel::new(GpKernelParams { l_scale: l, l_p: 2.0, beta_inv: 1e-4 }, 1.0).unwrap()
    }

    #[test]
    fn entropy_first_pick_lowest_index_then_far_end() {
        let sites = segment(9);
        let all: Vec<usize> = (0..9).collect();
        let r = entropy_select(&kernel(0.3), &sites, &all, &SelectionGoal::budget(2)).unwrap();
        assert_eq!(r.selections[1], vec![0, 8]);
    }

    #[test]
    fn tracker_matches_direct_variances() {
        let k = kernel(0.25);
        let sites: Vec<Point2> = (0..12).map(|i| Point2::new((i % 4) as f64 * 0.2, (i / 4) as f64 * 0.3)).collect();
        let mut t = VarianceTracker::new(&k, sites.clone());
        let mut obs = Vec::new();
        for &q in &[5, 0, 11, 2] {
            t.observe(q).unwrap();
            obs.push(sites[q]);
            let direct = posterior_variances(&k, &obs, &sites).unwrap();
            for (i, d) in direct.iter().enumerate() {
                assert!((t.variance(i) - d).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mi_centre_first_on_symmetric_grid() {
        let sites = segment(11);
        let all: Vec<usize> = (0..11).collect();
        let r = mi_select(&kernel(0.2), &sites, &all, &all, &SelectionGoal::budget(1)).unwrap();
        assert_eq!(r.selections[0], vec![5]);
    }

    #[test]
    fn mi_single_feasible_site() {
        let sites = segment(6);
        let r = mi_select(&kernel(0.2), &sites, &[3], &(0..6).collect::<Vec<_>>(), &SelectionGoal::budget(1)).unwrap();
        assert_eq!(r.selections[0], vec![3]);
    }

    #[test]
    fn selectors_stay_inside_feasible_set() {
        let sites = segment(15);
        let feasible = vec![2, 3, 4, 9, 10];
        let all: Vec<usize> = (0..15).collect();
        let goal = SelectionGoal::budget(5);
        let e = entropy_select(&kernel(0.1), &sites, &feasible, &goal).unwrap();
        let m = mi_select(&kernel(0.1), &sites, &feasible, &all, &goal).unwrap();
        for r in [e, m] {
            let mut s = r.selections[4].clone();
            s.sort_unstable();
            assert_eq!(s, feasible);
        }
        assert!(mi_select(&kernel(0.1), &sites, &[1, 20], &all, &goal).is_err());
        assert!(mi_select(&kernel(0.1), &sites, &[1, 2], &[2, 3], &SelectionGoal::budget(1)).is_err());
        assert!(entropy_select(&kernel(0.1), &sites, &[1, 1], &SelectionGoal::budget(1)).is_err());
    }
}
