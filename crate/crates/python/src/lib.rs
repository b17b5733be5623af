//! Python bindings: Gaussian targets, trajectories, rate formulas and the
//! config-driven commands.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mfcavi::analysis::{self, ConvexityReport};
use mfcavi::cli::{self, CliError};
use mfcavi::gaussian::GaussianProduct;
use mfcavi::harness::{run_trial, Engine, GaussianEngine, Schedule, Trajectory as CoreTrajectory};
use mfcavi::{BlockStructure, Potential};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cli_error(e: CliError) -> PyErr {
    match e {
        CliError::Validation(m) => PyValueError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("Q must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn schedule(seed: Option<u64>) -> Schedule {
    match seed {
        Some(seed) => Schedule::Random { seed },
        None => Schedule::Cyclic,
    }
}

/// Gap and distance trace of one CAVI run; index 0 is the initial state.
#[pyclass(frozen, module = "pymfcavi")]
struct Trajectory {
    inner: CoreTrajectory,
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn n(&self) -> Vec<u64> {
        self.inner.records.iter().map(|r| r.n).collect()
    }

    /// Block updated at each step; `None` for the initial state.
    #[getter]
    fn k(&self) -> Vec<Option<usize>> {
        self.inner.records.iter().map(|r| r.k).collect()
    }

    #[getter]
    fn gap(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.gap).collect()
    }

    #[getter]
    fn w2l_to_ref(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.w2l_to_ref).collect()
    }

    #[getter]
    fn second_moment(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.second_moment).collect()
    }

    #[getter]
    fn running_r(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.running_r).collect()
    }

    #[getter]
    fn problem_hash(&self) -> &str {
        &self.inner.meta.problem_hash
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    fn __repr__(&self) -> String {
        let last = self.inner.records.last().map_or(f64::NAN, |r| r.gap);
        format!("Trajectory(updates={}, final_gap={last:e})", self.inner.records.len() - 1)
    }
}

/// Gaussian target `exp(-½xᵀQx - bᵀx)` with a block partition.
#[pyclass(frozen, module = "pymfcavi")]
struct GaussianTarget {
    engine: GaussianEngine,
    report: ConvexityReport,
}

impl GaussianTarget {
    fn product(&self, means: &[f64], variances: &[f64]) -> PyResult<GaussianProduct> {
        GaussianProduct::from_diagonal(self.engine.model().blocks(), means, variances).map_err(value_error)
    }
}

#[pymethods]
impl GaussianTarget {
    #[new]
    #[pyo3(signature = (q, b, blocks = None))]
    fn new(q: Vec<Vec<f64>>, b: Vec<f64>, blocks: Option<Vec<usize>>) -> PyResult<Self> {
        let q = matrix(q)?;
        let blocks = match blocks {
            Some(sizes) => BlockStructure::new(sizes),
            None => BlockStructure::scalar(q.nrows()),
        }
        .map_err(value_error)?;
        let pot = Potential::quadratic(q, DVector::from_vec(b)).map_err(value_error)?;
        let report = analysis::analyze(&pot, &blocks, None).map_err(value_error)?;
        let engine = GaussianEngine::new(pot, blocks).map_err(value_error)?;
        Ok(Self { engine, report })
    }

    #[getter]
    fn block_count(&self) -> usize {
        self.engine.block_count()
    }

    #[getter]
    fn lambda_star(&self) -> f64 {
        self.report.lambda_star
    }

    /// Block smoothness constants `L_k`.
    #[getter]
    fn smoothness(&self) -> Vec<f64> {
        self.report.smoothness.clone()
    }

    #[getter]
    fn optimum_mean(&self) -> Vec<f64> {
        self.engine.model().optimum_mean().iter().copied().collect()
    }

    /// Full constants report as a dict.
    fn analyze<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.report)
    }

    /// KL gap of the product of independent normals to the mean-field optimum.
    fn kl_gap(&self, means: Vec<f64>, variances: Vec<f64>) -> PyResult<f64> {
        let state = self.product(&means, &variances)?;
        self.engine.gap(&state).map_err(value_error)
    }

    /// Runs `updates` CAVI updates; random scan when `seed` is given, cyclic otherwise.
    #[pyo3(signature = (means, variances, updates, seed = None))]
    fn run(&self, py: Python<'_>, means: Vec<f64>, variances: Vec<f64>, updates: u64, seed: Option<u64>) -> PyResult<Trajectory> {
        let init = self.product(&means, &variances)?;
        let s = schedule(seed);
        let inner = py
            .detach(|| run_trial(&self.engine, &init, &s, updates))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(Trajectory { inner })
    }
}

/// A validated experiment config.
#[pyclass(frozen, module = "pymfcavi")]
struct Problem {
    inner: cli::Problem,
}

#[pymethods]
impl Problem {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        cli::load_config(&path).map(|inner| Self { inner }).map_err(value_error)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        cli::parse_config(text).map(|inner| Self { inner }).map_err(value_error)
    }

    #[getter]
    fn block_count(&self) -> usize {
        self.inner.block_count()
    }

    #[pyo3(signature = (out = None))]
    fn analyze<'py>(&self, py: Python<'py>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let a = cli::cmd_analyze(&self.inner, out.as_deref()).map_err(cli_error)?;
        to_python(py, &a)
    }

    /// Writes trajectory.csv, summary.json and run_meta.json into `out`.
    fn run<'py>(&self, py: Python<'py>, out: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        let o = py.detach(|| cli::cmd_run(&self.inner, &out)).map_err(cli_error)?;
        to_python(py, &o.run_summary)
    }

    #[pyo3(signature = (out = None))]
    fn verify<'py>(&self, py: Python<'py>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let r = py.detach(|| cli::cmd_verify(&self.inner, out.as_deref())).map_err(cli_error)?;
        to_python(py, &r)
    }

    #[pyo3(signature = (seed = None, out = None))]
    fn compare<'py>(&self, py: Python<'py>, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let c = py
            .detach(|| cli::cmd_compare(&self.inner, seed, out.as_deref()))
            .map_err(cli_error)?;
        to_python(py, &c)
    }
}

#[pyfunction]
fn rate_bound_strong(n: u64, blocks: usize, lambda_star: f64, gap0: f64) -> PyResult<f64> {
    analysis::rate_bound_strong(n, blocks, lambda_star, gap0).map_err(value_error)
}

#[pyfunction]
fn rate_bound_convex(n: u64, blocks: usize, radius: f64) -> f64 {
    analysis::rate_bound_convex(n, blocks, radius)
}

#[pyfunction]
fn iterations_to_epsilon(blocks: usize, lambda_star: f64, gap0: f64, eps: f64, delta: f64) -> PyResult<u64> {
    analysis::iterations_to_epsilon(blocks, lambda_star, gap0, eps, delta).map_err(value_error)
}

#[pyfunction]
fn deterministic_scan_budget(blocks: usize, lambda_star: f64, gap0: f64, eps: f64) -> PyResult<u64> {
    analysis::deterministic_scan_budget(blocks, lambda_star, gap0, eps).map_err(value_error)
}

#[pymodule]
fn pymfcavi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<GaussianTarget>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(rate_bound_strong, m)?)?;
    m.add_function(wrap_pyfunction!(rate_bound_convex, m)?)?;
    m.add_function(wrap_pyfunction!(iterations_to_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(deterministic_scan_budget, m)?)?;
    Ok(())
}
