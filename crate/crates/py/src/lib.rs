//! Python bindings: simulate a plate, filter sites, choose sensors and train
//! a force locator without leaving Python.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sparsetouch::filter::{filter_pipeline, grid_pitch, FilterConfig};
use sparsetouch::locator::{default_params_for, mean};
use sparsetouch::plate::{cell_centered_sites, generate_dataset};
use sparsetouch::{
    study, DeformationDataset, ForceLocator, LocatorParams, Method, PlateSpec, SamplingGrid, SelectionGoal,
    SelectionResult, Signal, StudyConfig, SvrHyperParams, TrialSet,
};

fn to_py(e: sparsetouch::Error) -> PyErr {
    let msg = format!("{} ({})", e, e.kind());
    match e {
        sparsetouch::Error::Io(_) => PyOSError::new_err(msg),
        e if e.is_numerical() => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| PyValueError::new_err(e.to_string()))
}

fn study_config(seed: u64, trials: &str) -> PyResult<StudyConfig> {
    Ok(StudyConfig { seed, trial_set: parse::<TrialSet>(trials)?, ..Default::default() })
}

/// Sensor readings under a set of point loads.
#[pyclass(name = "Dataset", module = "sparsetouch_py")]
pub struct PyDataset {
    inner: DeformationDataset,
}

#[pymethods]
impl PyDataset {
    /// Simulated readings on a simply supported plate.
    #[staticmethod]
    #[pyo3(signature = (
        width = 200.0, height = 120.0, thickness = 2.0, youngs = 2000.0, poisson = 0.35,
        sensors = (30, 18), forces = (40, 24), magnitudes = vec![5.0, 10.0, 20.0, 34.0],
        signal = "deflection", terms = 100,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        width: f64,
        height: f64,
        thickness: f64,
        youngs: f64,
        poisson: f64,
        sensors: (usize, usize),
        forces: (usize, usize),
        magnitudes: Vec<f64>,
        signal: &str,
        terms: usize,
    ) -> PyResult<Self> {
        let spec = PlateSpec {
            width_a: width,
            height_b: height,
            thickness_h: thickness,
            youngs_e: youngs,
            poisson_nu: poisson,
            series_terms: terms,
        };
        let grid = SamplingGrid {
            sensor_sites: cell_centered_sites(&spec, sensors.0, sensors.1),
            force_sites: cell_centered_sites(&spec, forces.0, forces.1),
            force_magnitudes: magnitudes,
        };
        let inner = generate_dataset(&spec, &grid, parse::<Signal>(signal)?).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: DeformationDataset::load(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn n_sensors(&self) -> usize {
        self.inner.n_sensors()
    }

    #[getter]
    fn n_trials(&self) -> usize {
        self.inner.n_trials()
    }

    /// Readings as a list of rows, one per sensor.
    fn readings(&self) -> Vec<Vec<f64>> {
        self.inner.x().row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn sensor_sites(&self) -> Vec<(f64, f64)> {
        self.inner.sensor_sites().iter().map(|p| (p.u, p.v)).collect()
    }

    /// (u, v, magnitude) per trial.
    fn trials(&self) -> Vec<(f64, f64, f64)> {
        self.inner.force_trials().iter().map(|t| (t.u, t.v, t.magnitude)).collect()
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n_sensors={}, n_trials={})", self.inner.n_sensors(), self.inner.n_trials())
    }
}

/// Indices of sensor sites that pass the support-margin and centroid filters.
#[pyfunction]
#[pyo3(signature = (data, k_neighbors = 8, com_radius = None, support_margin = 10.0))]
fn filter_candidates(
    data: &PyDataset,
    k_neighbors: usize,
    com_radius: Option<f64>,
    support_margin: f64,
) -> PyResult<Vec<usize>> {
    let spec = data.inner.meta().spec.unwrap_or_default();
    let mut config = FilterConfig::for_plate(&spec, grid_pitch(data.inner.sensor_sites()));
    config.k_neighbors = k_neighbors;
    config.support_margin = support_margin;
    if let Some(r) = com_radius {
        config.com_radius = r;
    }
    filter_pipeline(data.inner.sensor_sites(), &config).map_err(to_py)
}

/// Nested sensor sets produced by one placement method.
#[pyclass(name = "Selection", module = "sparsetouch_py")]
pub struct PySelection {
    inner: SelectionResult,
}

#[pymethods]
impl PySelection {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: SelectionResult::load(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn max_budget(&self) -> usize {
        self.inner.max_budget()
    }

    fn at_budget(&self, k: usize) -> PyResult<Vec<usize>> {
        self.inner
            .at_budget(k)
            .map(<[usize]>::to_vec)
            .ok_or_else(|| PyValueError::new_err(format!("no selection of size {k}")))
    }

    fn __repr__(&self) -> String {
        format!("Selection(method={}, max_budget={})", self.inner.method, self.inner.max_budget())
    }
}

/// Choose up to `budget` sensors from `candidates` with `method`
/// (greedy-svr, pca-qr, entropy or mi), learning only from training trials.
#[pyfunction]
#[pyo3(signature = (data, candidates, method, budget = 10, seed = 7, trials = "all", subsample = 400))]
#[allow(clippy::too_many_arguments)]
fn select(
    py: Python<'_>,
    data: &PyDataset,
    candidates: Vec<usize>,
    method: &str,
    budget: usize,
    seed: u64,
    trials: &str,
    subsample: usize,
) -> PyResult<PySelection> {
    let method = parse::<Method>(method)?;
    let mut config = study_config(seed, trials)?;
    config.greedy.subsample = subsample;
    let inner = py
        .detach(|| -> sparsetouch::Result<SelectionResult> {
            let view = config.view(&data.inner)?;
            let split = config.split(view.n_trials())?;
            study::select(method, &view, &candidates, &split.train, &SelectionGoal::budget(budget), &config)
        })
        .map_err(to_py)?;
    Ok(PySelection { inner })
}

/// SVR force locator reading a fixed sensor set.
#[pyclass(name = "Locator", module = "sparsetouch_py")]
pub struct PyLocator {
    inner: ForceLocator,
    seed: u64,
    trials: String,
}

#[pymethods]
impl PyLocator {
    /// Train on the training split of `data`. C, ε and γ default to the
    /// settings used for a sensor set of this size.
    #[staticmethod]
    #[pyo3(signature = (data, sensors, c = None, epsilon = None, gamma = None, magnitude_head = false, seed = 7, trials = "all"))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        data: &PyDataset,
        sensors: Vec<usize>,
        c: Option<f64>,
        epsilon: Option<f64>,
        gamma: Option<f64>,
        magnitude_head: bool,
        seed: u64,
        trials: &str,
    ) -> PyResult<Self> {
        let d = default_params_for(sensors.len());
        let p = SvrHyperParams::new(c.unwrap_or(d.c), epsilon.unwrap_or(d.epsilon), gamma.unwrap_or(d.gamma));
        let params = LocatorParams { magnitude: magnitude_head.then_some(p), ..LocatorParams::position_only(p) };
        let config = study_config(seed, trials)?;
        let inner = py
            .detach(|| -> sparsetouch::Result<ForceLocator> {
                let view = config.view(&data.inner)?;
                let split = config.split(view.n_trials())?;
                ForceLocator::train(&view, &sensors, &split.train, &params)
            })
            .map_err(to_py)?;
        Ok(Self { inner, seed, trials: trials.to_string() })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = ForceLocator::load(path).map_err(to_py)?;
        Ok(Self { inner, seed: 7, trials: "all".into() })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn sensors(&self) -> Vec<usize> {
        self.inner.sensors.clone()
    }

    /// (u, v, magnitude) from raw readings of `sensors`; magnitude is None
    /// without a magnitude head.
    fn locate(&self, raw: Vec<f64>) -> PyResult<(f64, f64, Option<f64>)> {
        let e = self.inner.locate_raw(&raw).map_err(to_py)?;
        Ok((e.position.u, e.position.v, e.magnitude))
    }

    /// Mean position error (mm) on the held-out trials of `data`.
    fn test_error(&self, data: &PyDataset) -> PyResult<f64> {
        let config = study_config(self.seed, &self.trials)?;
        let view = config.view(&data.inner).map_err(to_py)?;
        let split = config.split(view.n_trials()).map_err(to_py)?;
        let errs = self.inner.evaluate(&view, &split.test, &[]).map_err(to_py)?;
        Ok(mean(&errs.iter().map(|e| e.position).collect::<Vec<_>>()))
    }
}

/// Deflection (mm) at (u, v) under a point load `magnitude` at (fu, fv).
#[pyfunction]
#[pyo3(signature = (fu, fv, magnitude, u, v, width = 200.0, height = 120.0, terms = 100))]
#[allow(clippy::too_many_arguments)]
fn deflection(fu: f64, fv: f64, magnitude: f64, u: f64, v: f64, width: f64, height: f64, terms: usize) -> PyResult<f64> {
    let spec = PlateSpec { width_a: width, height_b: height, series_terms: terms, ..Default::default() };
    let load = sparsetouch::ForceTrial::new(fu, fv, magnitude);
    sparsetouch::plate::deflection(&spec, &load, sparsetouch::Point2::new(u, v)).map_err(to_py)
}

#[pymodule]
fn sparsetouch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PySelection>()?;
    m.add_class::<PyLocator>()?;
    m.add_function(wrap_pyfunction!(filter_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(deflection, m)?)?;
    m.add("METHODS", Method::ALL.iter().map(|m| m.to_string()).collect::<Vec<_>>())?;
    Ok(())
}
