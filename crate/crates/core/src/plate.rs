//! Analytic thin-plate surrogate for the deformation simulator.
//!
//! A simply supported rectangular Kirchhoff plate under a transverse point
//! load has the closed-form Navier double-sine solution
//!
//! ```text
//! w(u, v) = 4P / (pi^4 D a b) * sum_{m,n=1..T} sin(m pi u0/a) sin(n pi v0/b)
//!           * sin(m pi u/a) sin(n pi v/b) / ((m/a)^2 + (n/b)^2)^2
//! ```
//!
//! with flexural rigidity `D = E h^3 / (12 (1 - nu^2))`. Surface strains are
//! obtained by differentiating the same truncated series term by term.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, DeformationDataset, DATASET_FORMAT_VERSION};
use crate::error::{Error, Result};

/// A point in unfolded surface coordinates (mm).
///
/// Serialized as a two-element array `[u, v]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(a: [f64; 2]) -> Self {
        Point2::new(a[0], a[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.u, p.v]
    }
}

/// One applied point load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceTrial {
    pub u: f64,
    pub v: f64,
    /// Load magnitude in newtons.
    pub magnitude: f64,
}

impl ForceTrial {
    pub const fn new(u: f64, v: f64, magnitude: f64) -> Self {
        Self { u, v, magnitude }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.u, self.v)
    }
}

/// Geometry and material of the simply supported plate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateSpec {
    /// Extent along u (mm).
    pub width_a: f64,
    /// Extent along v (mm).
    pub height_b: f64,
    /// Thickness (mm).
    pub thickness_h: f64,
    /// Young's modulus (MPa).
    pub youngs_e: f64,
    pub poisson_nu: f64,
    /// Truncation order of both series indices.
    pub series_terms: usize,
}

impl Default for PlateSpec {
    /// Footprint of the reference limb shell, printed-plastic material.
    fn default() -> Self {
        Self {
            width_a: 200.0,
            height_b: 120.0,
            thickness_h: 2.0,
            youngs_e: 2000.0,
            poisson_nu: 0.35,
            series_terms: 100,
        }
    }
}

impl PlateSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.width_a,
            self.height_b,
            self.thickness_h,
            self.youngs_e,
            self.poisson_nu,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::validation("plate spec contains non-finite values"));
        }
        if self.width_a <= 0.0 || self.height_b <= 0.0 || self.thickness_h <= 0.0 {
            return Err(Error::validation("plate dimensions must be positive"));
        }
        if self.youngs_e <= 0.0 {
            return Err(Error::validation("Young's modulus must be positive"));
        }
        if !(0.0..0.5).contains(&self.poisson_nu) {
            return Err(Error::validation("Poisson ratio must lie in [0, 0.5)"));
        }
        if self.series_terms == 0 {
            return Err(Error::validation("series_terms must be at least 1"));
        }
        let d = self.flexural_rigidity();
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::validation("flexural rigidity is not finite and positive"));
        }
        Ok(())
    }

    /// `D = E h^3 / (12 (1 - nu^2))` in N*mm.
    pub fn flexural_rigidity(&self) -> f64 {
        self.youngs_e * self.thickness_h.powi(3) / (12.0 * (1.0 - self.poisson_nu * self.poisson_nu))
    }

    pub fn diagonal(&self) -> f64 {
        self.width_a.hypot(self.height_b)
    }

    fn contains_closed(&self, p: Point2) -> bool {
        (0.0..=self.width_a).contains(&p.u) && (0.0..=self.height_b).contains(&p.v)
    }

    fn contains_open(&self, p: Point2) -> bool {
        p.u > 0.0 && p.u < self.width_a && p.v > 0.0 && p.v < self.height_b
    }

    fn check_query(&self, query: Point2) -> Result<()> {
        if !query.u.is_finite() || !query.v.is_finite() || !self.contains_closed(query) {
            return Err(Error::domain(format!(
                "query ({}, {}) lies outside the plate [0, {}] x [0, {}]",
                query.u, query.v, self.width_a, self.height_b
            )));
        }
        Ok(())
    }

    fn check_load(&self, load: &ForceTrial) -> Result<()> {
        if !load.magnitude.is_finite() {
            return Err(Error::validation("load magnitude is not finite"));
        }
        if !load.u.is_finite() || !load.v.is_finite() || !self.contains_open(load.position()) {
            return Err(Error::domain(format!(
                "load ({}, {}) must lie strictly inside the plate",
                load.u, load.v
            )));
        }
        Ok(())
    }
}

/// Measured quantity recorded at each sensor site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Transverse deflection (mm).
    Deflection,
    /// Surface bending strain along u.
    StrainU,
    /// Surface bending strain along v.
    StrainV,
}

impl std::str::FromStr for Signal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deflection" => Ok(Signal::Deflection),
            "strain_u" | "strain-u" => Ok(Signal::StrainU),
            "strain_v" | "strain-v" => Ok(Signal::StrainV),
            other => Err(Error::validation(format!(
                "unknown signal '{other}' (expected deflection, strain_u, strain_v)"
            ))),
        }
    }
}

/// Strain-gauge orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    U,
    V,
}

/// `sin(k pi x / len)` for k = 1..=terms. Exactly zero on the boundary.
fn sine_row(x: f64, len: f64, terms: usize) -> Vec<f64> {
    if x <= 0.0 || x >= len {
        return vec![0.0; terms];
    }
    (1..=terms).map(|k| (k as f64 * PI * x / len).sin()).collect()
}

/// Mode weights `f(m, n) / ((m/a)^2 + (n/b)^2)^2`, times the series prefactor.
fn mode_weights(spec: &PlateSpec, signal: Signal) -> DMatrix<f64> {
    let t = spec.series_terms;
    let (a, b) = (spec.width_a, spec.height_b);
    let pref = 4.0 / (PI.powi(4) * spec.flexural_rigidity() * a * b);
    let half_h = 0.5 * spec.thickness_h;
    DMatrix::from_fn(t, t, |i, j| {
        let (m, n) = ((i + 1) as f64, (j + 1) as f64);
        let denom = (m / a).powi(2) + (n / b).powi(2);
        let base = pref / (denom * denom);
        match signal {
            Signal::Deflection => base,
            // eps = -(h/2) d2w/du2 and d2/du2 sin(m pi u / a) = -(m pi / a)^2 sin(..)
            Signal::StrainU => half_h * (m * PI / a).powi(2) * base,
            Signal::StrainV => half_h * (n * PI / b).powi(2) * base,
        }
    })
}

fn evaluate(spec: &PlateSpec, load: &ForceTrial, query: Point2, signal: Signal) -> Result<f64> {
    spec.validate()?;
    spec.check_load(load)?;
    spec.check_query(query)?;
    let t = spec.series_terms;
    let weights = mode_weights(spec, signal);
    let lu = sine_row(load.u, spec.width_a, t);
    let lv = sine_row(load.v, spec.height_b, t);
    let qu = sine_row(query.u, spec.width_a, t);
    let qv = sine_row(query.v, spec.height_b, t);
    let mut total = 0.0;
    for m in 0..t {
        let um = lu[m] * qu[m];
        if um == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for n in 0..t {
            inner += weights[(m, n)] * lv[n] * qv[n];
        }
        total += um * inner;
    }
    Ok(load.magnitude * total)
}

/// Transverse deflection (mm) at `query` under `load`.
pub fn deflection(spec: &PlateSpec, load: &ForceTrial, query: Point2) -> Result<f64> {
    evaluate(spec, load, query, Signal::Deflection)
}

/// Bending strain `-(h/2) d2w/d(axis)2` at the surface, via term-wise
/// differentiation of the deflection series.
pub fn surface_strain(spec: &PlateSpec, load: &ForceTrial, query: Point2, axis: Axis) -> Result<f64> {
    let signal = match axis {
        Axis::U => Signal::StrainU,
        Axis::V => Signal::StrainV,
    };
    evaluate(spec, load, query, signal)
}

/// Sensor and force locations plus the load levels applied at each force site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub sensor_sites: Vec<Point2>,
    pub force_sites: Vec<Point2>,
    pub force_magnitudes: Vec<f64>,
}

/// Cell-centred `nu x nv` lattice over the plate; u varies fastest.
pub fn cell_centered_sites(spec: &PlateSpec, nu: usize, nv: usize) -> Vec<Point2> {
    let mut sites = Vec::with_capacity(nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            sites.push(Point2::new(
                (2 * i + 1) as f64 * spec.width_a / (2 * nu) as f64,
                (2 * j + 1) as f64 * spec.height_b / (2 * nv) as f64,
            ));
        }
    }
    sites
}

impl SamplingGrid {
    /// 30 x 18 sensor sites, 40 x 24 force sites, loads of 5, 10, 20 and 34 N.
    pub fn default_for(spec: &PlateSpec) -> Self {
        Self {
            sensor_sites: cell_centered_sites(spec, 30, 18),
            force_sites: cell_centered_sites(spec, 40, 24),
            force_magnitudes: vec![5.0, 10.0, 20.0, 34.0],
        }
    }

    /// Trials in dataset column order: force-site major, magnitude minor.
    pub fn trials(&self) -> Vec<ForceTrial> {
        self.force_sites
            .iter()
            .flat_map(|p| self.force_magnitudes.iter().map(move |&f| ForceTrial::new(p.u, p.v, f)))
            .collect()
    }

    pub fn validate(&self, spec: &PlateSpec) -> Result<()> {
        if self.sensor_sites.is_empty() || self.force_sites.is_empty() || self.force_magnitudes.is_empty() {
            return Err(Error::validation("sampling grid must have sensor sites, force sites and magnitudes"));
        }
        for p in &self.sensor_sites {
            spec.check_query(*p)?;
        }
        for p in &self.force_sites {
            spec.check_load(&ForceTrial::new(p.u, p.v, 1.0))?;
        }
        if self.force_magnitudes.iter().any(|f| !f.is_finite()) {
            return Err(Error::validation("force magnitudes must be finite"));
        }
        check_unique(&self.sensor_sites, "sensor_sites")?;
        check_unique(&self.force_sites, "force_sites")?;
        Ok(())
    }
}

fn check_unique(sites: &[Point2], what: &str) -> Result<()> {
    let mut keys: Vec<(u64, u64)> = sites.iter().map(|p| (p.u.to_bits(), p.v.to_bits())).collect();
    keys.sort_unstable();
    if keys.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::validation(format!("{what} contains duplicate points")));
    }
    Ok(())
}

/// Simulates every (force site, magnitude) trial and records `signal` at every
/// sensor site. Rows are sensors, columns are trials in [`SamplingGrid::trials`] order.
pub fn generate_dataset(spec: &PlateSpec, grid: &SamplingGrid, signal: Signal) -> Result<DeformationDataset> {
    spec.validate()?;
    grid.validate(spec)?;
    let t = spec.series_terms;
    let weights = mode_weights(spec, signal);
    let n_sensors = grid.sensor_sites.len();
    // T x N_sensors sine table along v
    let sv_cols: Vec<Vec<f64>> = grid
        .sensor_sites
        .iter()
        .map(|p| sine_row(p.v, spec.height_b, t))
        .collect();
    let sv = DMatrix::from_fn(t, n_sensors, |n, s| sv_cols[s][n]);
    let su_cols: Vec<Vec<f64>> = grid
        .sensor_sites
        .iter()
        .map(|p| sine_row(p.u, spec.width_a, t))
        .collect();

    // Unit-load response per force site; each column is independent.
    let unit: Vec<Vec<f64>> = grid
        .force_sites
        .par_iter()
        .map(|site| {
            let lu = sine_row(site.u, spec.width_a, t);
            let lv = sine_row(site.v, spec.height_b, t);
            let g = DMatrix::from_fn(t, t, |m, n| lu[m] * lv[n] * weights[(m, n)]);
            let h = &g * &sv; // T x N_sensors
            (0..n_sensors)
                .map(|s| {
                    let col = h.column(s);
                    su_cols[s].iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        })
        .collect();

    let trials = grid.trials();
    let n_mag = grid.force_magnitudes.len();
    let x = DMatrix::from_fn(n_sensors, trials.len(), |s, j| {
        let site = j / n_mag;
        trials[j].magnitude * unit[site][s]
    });
    DeformationDataset::new(
        x,
        grid.sensor_sites.clone(),
        trials,
        DatasetMeta {
            version: DATASET_FORMAT_VERSION,
            spec: Some(*spec),
            signal: Some(signal),
        },
    )
}
