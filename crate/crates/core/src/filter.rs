//! Feasibility filtering of candidate sensor sites.
//!
//! Two criteria are combined: a margin strip along the rigid supports is
//! excluded, and sites whose k-nearest-neighbour centroid drifts away from the
//! site itself (edges, corners, sparse regions) are dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plate::{PlateSpec, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub k_neighbors: usize,
    /// Maximum site-to-centroid distance (mm). `f64::INFINITY` keeps everything.
    pub com_radius: f64,
    /// Width of the excluded strip along each support line (mm).
    pub support_margin: f64,
    /// v-coordinates of the rigid support lines.
    pub support_lines: [f64; 2],
}

impl FilterConfig {
    /// k = 8, radius = 0.15 grid pitch, 10 mm margin along v = 0 and v = b.
    pub fn for_plate(spec: &PlateSpec, grid_pitch: f64) -> Self {
        Self {
            k_neighbors: 8,
            com_radius: 0.15 * grid_pitch,
            support_margin: 10.0,
            support_lines: [0.0, spec.height_b],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors < 1 {
            return Err(Error::validation("k_neighbors must be at least 1"));
        }
        if self.com_radius.is_nan() || self.com_radius <= 0.0 {
            return Err(Error::validation("com_radius must be positive"));
        }
        if self.support_margin.is_nan() || self.support_margin < 0.0 {
            return Err(Error::validation("support_margin must be non-negative"));
        }
        Ok(())
    }
}

/// Sites farther than `support_margin` from both support lines.
pub fn margin_filter(sites: &[Point2], config: &FilterConfig) -> Result<Vec<usize>> {
    config.validate()?;
    if sites.is_empty() {
        return Err(Error::validation("no sites to filter"));
    }
    if config.support_margin == 0.0 {
        return Ok((0..sites.len()).collect());
    }
    Ok(sites
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            config
                .support_lines
                .iter()
                .all(|&line| (p.v - line).abs() > config.support_margin)
        })
        .map(|(i, _)| i)
        .collect())
}

/// Indices of the `k` nearest other sites to `sites[i]`; ties go to the lower index.
pub fn nearest_neighbors(sites: &[Point2], i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = sites
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, p)| (sites[i].distance(p), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.truncate(k);
    others.into_iter().map(|(_, j)| j).collect()
}

/// Distance from each site to the centroid of its k nearest neighbours
/// (the site itself excluded).
pub fn centroid_offsets(sites: &[Point2], k: usize) -> Result<Vec<f64>> {
    if sites.len() <= k {
        return Err(Error::validation(format!(
            "centre-of-mass filter needs more than {k} sites, got {}",
            sites.len()
        )));
    }
    Ok((0..sites.len())
        .map(|i| {
            let nn = nearest_neighbors(sites, i, k);
            let (su, sv) = nn.iter().fold((0.0, 0.0), |(a, b), &j| (a + sites[j].u, b + sites[j].v));
            let c = Point2::new(su / k as f64, sv / k as f64);
            sites[i].distance(&c)
        })
        .collect())
}

/// Sites whose neighbourhood centroid lies within `com_radius`.
pub fn com_filter(sites: &[Point2], config: &FilterConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let offsets = centroid_offsets(sites, config.k_neighbors)?;
    Ok(offsets
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= config.com_radius)
        .map(|(i, _)| i)
        .collect())
}

/// Smallest positive spacing along u between sites; infinite for fewer than
/// two distinct columns.
pub fn grid_pitch(sites: &[Point2]) -> f64 {
    let mut us: Vec<f64> = sites.iter().map(|p| p.u).collect();
    us.sort_by(f64::total_cmp);
    us.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 1e-9).fold(f64::INFINITY, f64::min)
}

/// Intersection of [`margin_filter`] and [`com_filter`], ascending.
pub fn filter_pipeline(sites: &[Point2], config: &FilterConfig) -> Result<Vec<usize>> {
    let margin = margin_filter(sites, config)?;
    let com = com_filter(sites, config)?;
    Ok(intersect_sorted(&margin, &com))
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plate::cell_centered_sites;
    use proptest::prelude::*;

    fn lattice(nu: usize, nv: usize, pitch: f64) -> Vec<Point2> {
        let mut v = Vec::new();
        for j in 0..nv {
            for i in 0..nu {
                v.push(Point2::new(i as f64 * pitch, j as f64 * pitch));
            }
        }
        v
    }

    fn cfg(k: usize, radius: f64, margin: f64, lines: [f64; 2]) -> FilterConfig {
        FilterConfig { k_neighbors: k, com_radius: radius, support_margin: margin, support_lines: lines }
    }

    #[test]
    fn zero_margin_keeps_all() {
        let sites = lattice(4, 4, 1.0);
        assert_eq!(margin_filter(&sites, &cfg(8, 1.0, 0.0, [0.0, 3.0])).unwrap().len(), 16);
    }

    #[test]
    fn oversized_margin_keeps_none() {
        let sites = lattice(5, 5, 10.0);
        assert!(margin_filter(&sites, &cfg(8, 1.0, 61.0, [0.0, 120.0])).unwrap().is_empty());
    }

    #[test]
    fn margin_on_5x5_plate_grid() {
        // 5 x 5 grid spanning 200 x 120 mm: v rows at 0, 30, 60, 90, 120
        let mut sites = Vec::new();
        for j in 0..5 {
            for i in 0..5 {
                sites.push(Point2::new(50.0 * i as f64, 30.0 * j as f64));
            }
        }
        let kept = margin_filter(&sites, &cfg(8, 1.0, 15.0, [0.0, 120.0])).unwrap();
        assert_eq!(kept, (5..20).collect::<Vec<_>>());
    }

    #[test]
    fn interior_kept_and_corner_removed() {
        let pitch = 2.0;
        let sites = lattice(7, 7, pitch);
        let kept = com_filter(&sites, &cfg(8, 1e-9, 0.0, [0.0, 0.0])).unwrap();
        let center = 3 * 7 + 3;
        assert!(kept.contains(&center));
        // corner neighbourhood: 2 at p, 1 at sqrt2 p, 2 at 2p, 2 at sqrt5 p, 1 at 2 sqrt2 p;
        // centroid sits at (1.125 p, 1.125 p) from the corner
        let offsets = centroid_offsets(&sites, 8).unwrap();
        assert!((offsets[0] - 1.125 * 2f64.sqrt() * pitch).abs() < 1e-12);
        let kept = com_filter(&sites, &cfg(8, 0.1 * pitch, 0.0, [0.0, 0.0])).unwrap();
        assert!(!kept.contains(&0));
        assert!(kept.contains(&center));
    }

    #[test]
    fn infinite_radius_keeps_all() {
        let sites = lattice(5, 3, 1.0);
        let kept = com_filter(&sites, &cfg(4, f64::INFINITY, 0.0, [0.0, 0.0])).unwrap();
        assert_eq!(kept.len(), 15);
    }

    #[test]
    fn too_few_sites() {
        let sites = lattice(2, 2, 1.0);
        assert!(matches!(com_filter(&sites, &cfg(4, 1.0, 0.0, [0.0, 0.0])), Err(Error::Validation(_))));
    }

    #[test]
    fn pipeline_reduces_to_other_filter_when_one_keeps_all() {
        let sites = lattice(6, 6, 1.0);
        let only_com = cfg(8, 0.2, 0.0, [0.0, 5.0]);
        assert_eq!(filter_pipeline(&sites, &only_com).unwrap(), com_filter(&sites, &only_com).unwrap());
        let only_margin = cfg(8, f64::INFINITY, 1.5, [0.0, 5.0]);
        assert_eq!(filter_pipeline(&sites, &only_margin).unwrap(), margin_filter(&sites, &only_margin).unwrap());
    }

    #[test]
    fn default_plate_grid_keeps_strict_interior() {
        let spec = PlateSpec::default();
        let sites = cell_centered_sites(&spec, 30, 18);
        let pitch = spec.width_a / 30.0;
        let kept = filter_pipeline(&sites, &FilterConfig::for_plate(&spec, pitch)).unwrap();
        assert!(!kept.is_empty() && kept.len() < 540);
        // hull of the lattice is its outer ring
        for &i in &kept {
            let (col, row) = (i % 30, i / 30);
            assert!(col > 0 && col < 29 && row > 0 && row < 17, "site {i} lies on the hull");
        }
    }

    fn cloud() -> impl Strategy<Value = Vec<Point2>> {
        prop::collection::vec((0.0f64..100.0, 0.0f64..60.0), 12..40)
            .prop_map(|v| v.into_iter().map(|(u, w)| Point2::new(u, w)).collect())
    }

    proptest! {
        #[test]
        fn pipeline_is_set_intersection(sites in cloud(), radius in 0.5f64..20.0, margin in 0.0f64..20.0) {
            let c = cfg(5, radius, margin, [0.0, 60.0]);
            let m = margin_filter(&sites, &c).unwrap();
            let k = com_filter(&sites, &c).unwrap();
            let expected: Vec<usize> = (0..sites.len()).filter(|i| m.contains(i) && k.contains(i)).collect();
            prop_assert_eq!(filter_pipeline(&sites, &c).unwrap(), expected);
        }

        #[test]
        fn com_filter_monotone_in_radius(sites in cloud(), r1 in 0.5f64..10.0, dr in 0.0f64..10.0) {
            let small = com_filter(&sites, &cfg(5, r1, 0.0, [0.0, 60.0])).unwrap();
            let large = com_filter(&sites, &cfg(5, r1 + dr, 0.0, [0.0, 60.0])).unwrap();
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }

        #[test]
        fn com_filter_rigid_motion_invariant(sites in cloud(), angle in 0.0f64..std::f64::consts::TAU, tu in -50.0f64..50.0, tv in -50.0f64..50.0) {
            let (s, c) = angle.sin_cos();
            let moved: Vec<Point2> = sites.iter().map(|p| Point2::new(c * p.u - s * p.v + tu, s * p.u + c * p.v + tv)).collect();
            let offsets = centroid_offsets(&sites, 5).unwrap();
            let moved_offsets = centroid_offsets(&moved, 5).unwrap();
            // pick a radius away from every offset so rounding cannot flip membership
            let mut sorted = offsets.clone();
            sorted.sort_by(f64::total_cmp);
            let gap = sorted.windows(2).max_by(|a, b| (a[1] - a[0]).total_cmp(&(b[1] - b[0]))).unwrap();
            prop_assume!(gap[1] - gap[0] > 1e-6);
            let radius = 0.5 * (gap[0] + gap[1]);
            let c1 = cfg(5, radius, 0.0, [0.0, 0.0]);
            let kept = com_filter(&sites, &c1).unwrap();
            let kept_moved = com_filter(&moved, &c1).unwrap();
            prop_assert_eq!(kept, kept_moved);
            for (a, b) in offsets.iter().zip(&moved_offsets) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }
}
