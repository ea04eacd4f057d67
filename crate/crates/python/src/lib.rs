//! Python bindings for the low-rank kinetic solvers.

use std::cell::RefCell;

use lowrank_kinetics::config::ExperimentConfig;
use lowrank_kinetics::diagnostics;
use lowrank_kinetics::explicit::ExplicitConfig;
use lowrank_kinetics::implicit::{ALSStepConfig, ImplicitStepper};
use lowrank_kinetics::models::{self, AdvectionSpec, BGKSpec};
use lowrank_kinetics::{runner, Error, C64};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Conditioning { .. } | Error::InvalidState(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

/// Fourier basis `exp(iπsz/b)/sqrt(2b)` on `[-b, b]` with an odd number of modes.
#[pyclass(name = "BasisSpec", frozen, from_py_object)]
#[derive(Clone)]
struct PyBasisSpec(lowrank_kinetics::BasisSpec);

#[pymethods]
impl PyBasisSpec {
    #[new]
    fn new(modes: usize, half_width: f64) -> PyResult<Self> {
        lowrank_kinetics::BasisSpec::new(modes, half_width).map(Self).map_err(py_err)
    }

    #[getter]
    fn modes(&self) -> usize {
        self.0.modes()
    }

    #[getter]
    fn half_width(&self) -> f64 {
        self.0.half_width()
    }

    fn eval(&self, freq: i64, z: f64) -> PyResult<C64> {
        self.0.eval(freq, z).map_err(py_err)
    }

    /// Galerkin coefficients of a Python callable `f(z) -> complex`.
    fn project(&self, f: Bound<'_, PyAny>) -> PyResult<Vec<C64>> {
        let failure: RefCell<Option<PyErr>> = RefCell::new(None);
        let c = self.0.project(|z| match f.call1((z,)).and_then(|v| v.extract::<C64>()) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                C64::new(0.0, 0.0)
            }
        });
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(c.iter().copied().collect()),
        }
    }

    fn __repr__(&self) -> String {
        format!("BasisSpec(modes={}, half_width={})", self.0.modes(), self.0.half_width())
    }
}

/// Canonical polyadic tensor; factors are `modes × rank` nested lists.
#[pyclass(name = "CPTensor", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCPTensor(lowrank_kinetics::CPTensor);

#[pymethods]
impl PyCPTensor {
    #[new]
    fn new(specs: Vec<PyBasisSpec>, factors: Vec<Vec<Vec<C64>>>) -> PyResult<Self> {
        let mats = factors
            .iter()
            .map(|rows| {
                let cols = rows.first().map_or(0, |r| r.len());
                if rows.iter().any(|r| r.len() != cols) {
                    return Err(PyValueError::new_err("factor rows differ in length"));
                }
                Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
            })
            .collect::<PyResult<Vec<_>>>()?;
        let specs = specs.into_iter().map(|s| s.0).collect();
        lowrank_kinetics::CPTensor::from_factors(specs, mats).map(Self).map_err(py_err)
    }

    #[getter]
    fn rank(&self) -> usize {
        self.0.rank()
    }

    #[getter]
    fn ndims(&self) -> usize {
        self.0.ndims()
    }

    fn factor(&self, k: usize) -> PyResult<Vec<Vec<C64>>> {
        if k >= self.0.ndims() {
            return Err(PyValueError::new_err(format!("dimension {k} out of range")));
        }
        let f = self.0.factor(k);
        Ok((0..f.nrows()).map(|i| f.row(i).iter().copied().collect()).collect())
    }

    fn evaluate(&self, z: Vec<f64>) -> PyResult<C64> {
        self.0.evaluate(&z).map_err(py_err)
    }

    fn inner(&self, other: &PyCPTensor) -> PyResult<C64> {
        self.0.inner_product(&other.0).map_err(py_err)
    }

    fn norm(&self) -> f64 {
        self.0.norm()
    }

    fn __add__(&self, other: &PyCPTensor) -> PyResult<Self> {
        self.0.add(&other.0).map(Self).map_err(py_err)
    }

    fn scale(&self, a: C64) -> Self {
        Self(self.0.scale(a))
    }

    /// Coefficient tensor flattened with the first dimension fastest.
    fn to_dense(&self) -> Vec<C64> {
        self.0.to_dense()
    }

    fn __repr__(&self) -> String {
        format!("CPTensor(ndims={}, rank={})", self.0.ndims(), self.0.rank())
    }
}

/// Hierarchical Tucker tensor on the balanced dimension tree.
#[pyclass(name = "HTTensor", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHTTensor(lowrank_kinetics::HTTensor);

#[pymethods]
impl PyHTTensor {
    #[staticmethod]
    fn from_cp(f: &PyCPTensor) -> PyResult<Self> {
        lowrank_kinetics::HTTensor::from_cp(&f.0).map(Self).map_err(py_err)
    }

    fn node_ranks(&self) -> Vec<usize> {
        self.0.node_ranks()
    }

    #[getter]
    fn max_rank(&self) -> usize {
        self.0.max_rank()
    }

    fn evaluate(&self, z: Vec<f64>) -> PyResult<C64> {
        self.0.evaluate(&z).map_err(py_err)
    }

    fn inner(&self, other: &PyHTTensor) -> PyResult<C64> {
        self.0.inner_product(&other.0).map_err(py_err)
    }

    fn norm(&self) -> f64 {
        self.0.norm()
    }

    fn __add__(&self, other: &PyHTTensor) -> PyResult<Self> {
        self.0.add(&other.0).map(Self).map_err(py_err)
    }

    /// Returns `(truncated, error_estimate)`.
    #[pyo3(signature = (r_max, eps = 0.0))]
    fn truncate(&self, r_max: usize, eps: f64) -> PyResult<(Self, f64)> {
        let t = self.0.truncate(r_max, eps).map_err(py_err)?;
        Ok((Self(t.tensor), t.error_estimate))
    }

    fn to_dense(&self) -> Vec<C64> {
        self.0.to_dense()
    }

    fn __repr__(&self) -> String {
        format!("HTTensor(ndims={}, ranks={:?})", self.0.ndims(), self.0.node_ranks())
    }
}

/// Linearized BGK model; keyword arguments override the defaults.
#[pyclass(name = "BGKModel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBGKModel(BGKSpec);

#[pymethods]
impl PyBGKModel {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let spec = match kwargs {
            None => BGKSpec::default(),
            Some(kw) => {
                let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
                serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?
            }
        };
        spec.validate().map_err(py_err)?;
        Ok(Self(spec))
    }

    #[getter]
    fn modes(&self) -> usize {
        self.0.modes
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt
    }

    #[getter]
    fn tau_r(&self) -> f64 {
        self.0.tau_r
    }

    #[getter]
    fn nu(&self) -> f64 {
        self.0.nu()
    }

    #[getter]
    fn rt(&self) -> f64 {
        self.0.rt()
    }

    fn maxwellian(&self, v: [f64; 3]) -> f64 {
        models::maxwellian(v, &self.0)
    }

    fn maxwellian_cp(&self) -> PyResult<PyCPTensor> {
        models::maxwellian_cp(&self.0).map(PyCPTensor).map_err(py_err)
    }

    #[pyo3(signature = (epsilon = 0.3))]
    fn perturbed_ic(&self, epsilon: f64) -> PyResult<PyCPTensor> {
        models::perturbed_ic(&self.0, epsilon).map(PyCPTensor).map_err(py_err)
    }

    fn nmae(&self, f: &PyCPTensor) -> PyResult<f64> {
        diagnostics::nmae_vs_maxwellian(&f.0, &self.0).map_err(py_err)
    }

    /// `(rho, (ux, uy, uz), T)` box averages.
    fn moments(&self, f: &PyCPTensor) -> PyResult<(f64, [f64; 3], f64)> {
        let m = diagnostics::moments(&f.0, &self.0, 0.0).map_err(py_err)?;
        Ok((m.mean_density, m.mean_velocity, m.mean_temperature))
    }

    fn __repr__(&self) -> String {
        format!("BGKModel(modes={}, dt={:e})", self.0.modes, self.0.dt)
    }
}

/// Crank–Nicolson + ALS stepper for the BGK model.
#[pyclass(name = "BGKStepper")]
struct PyBGKStepper {
    inner: ImplicitStepper,
    forcing: lowrank_kinetics::implicit::Forcing,
}

#[pymethods]
impl PyBGKStepper {
    #[new]
    #[pyo3(signature = (model, workers = 1, seed = 0, eps_tol = 1e-8, max_sweeps = 500))]
    fn new(model: &PyBGKModel, workers: usize, seed: u64, eps_tol: f64, max_sweeps: usize) -> PyResult<Self> {
        let cfg = ALSStepConfig { workers, seed, eps_tol, max_sweeps, ..Default::default() };
        let pair = model.0.cn_pair().map_err(py_err)?;
        let inner = ImplicitStepper::new(&pair, &model.0.specs(), cfg).map_err(py_err)?;
        Ok(Self { inner, forcing: model.0.forcing().map_err(py_err)? })
    }

    /// One step; returns `(next, sweeps, converged)`.
    fn step(&mut self, py: Python<'_>, f: &PyCPTensor) -> PyResult<(PyCPTensor, usize, bool)> {
        let (g, rep) = py.detach(|| self.inner.step(&f.0, Some(&self.forcing))).map_err(py_err)?;
        Ok((PyCPTensor(g), rep.sweeps, rep.converged))
    }
}

/// Normalized mean absolute error `(1/N)·‖x − y‖₁ / (max x − min y)`.
#[pyfunction]
fn nmae(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    diagnostics::nmae(&x, &y).map_err(py_err)
}

/// NMAE of the rank-1 Maxwellian fit with `modes` and `b_v = width·sqrt(RT)`.
#[pyfunction]
fn maxwellian_nmae(py: Python<'_>, modes: usize, width: f64) -> PyResult<f64> {
    py.detach(|| runner::maxwellian_nmae(&BGKSpec::default(), modes, width)).map_err(py_err)
}

/// Probe error series `[(t, rel_err)]` for the spiral advection problem.
#[pyfunction]
#[pyo3(signature = (n = 2, modes = 65, half_width = 10.0, rank = 8, dt = 1e-3, steps = 100, every = 10))]
#[allow(clippy::too_many_arguments)]
fn advection_errors(
    py: Python<'_>,
    n: usize,
    modes: usize,
    half_width: f64,
    rank: usize,
    dt: f64,
    steps: usize,
    every: usize,
) -> PyResult<Vec<(f64, f64)>> {
    py.detach(|| {
        let spec = AdvectionSpec::spiral(n, half_width, modes)?;
        let f0 = lowrank_kinetics::HTTensor::from_cp(&spec.initial_condition()?)?;
        let cfg = ExplicitConfig::new(dt, rank, 1e-12);
        runner::advection_series(&spec, f0, &cfg, steps, every.max(1)).map(|r| r.0)
    })
    .map_err(py_err)
}

/// Runs an experiment from TOML text and returns the manifest results as a dict.
#[pyfunction]
#[pyo3(signature = (toml_text, out = None))]
fn run_experiment<'py>(py: Python<'py>, toml_text: &str, out: Option<std::path::PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = ExperimentConfig::from_toml(toml_text).map_err(py_err)?;
    if out.is_some() {
        cfg.out = out;
    }
    let o = py.detach(|| runner::run(&cfg)).map_err(py_err)?;
    let d = json_to_py(py, &o.results)?;
    d.set_item("converged", o.converged)?;
    d.set_item("out_dir", o.out_dir.to_string_lossy().into_owned())?;
    Ok(d)
}

#[pymodule]
fn lowrank_kinetics_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBasisSpec>()?;
    m.add_class::<PyCPTensor>()?;
    m.add_class::<PyHTTensor>()?;
    m.add_class::<PyBGKModel>()?;
    m.add_class::<PyBGKStepper>()?;
    m.add_function(wrap_pyfunction!(nmae, m)?)?;
    m.add_function(wrap_pyfunction!(maxwellian_nmae, m)?)?;
    m.add_function(wrap_pyfunction!(advection_errors, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("BUILD_ID", runner::BUILD_ID)?;
    Ok(())
}
