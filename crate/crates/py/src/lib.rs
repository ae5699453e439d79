//! Python bindings for `bpire_core`.

use bpire_core::env_model::{classify_regime, Family, IncrementLaw, RegimeClass, CLOSED_FORM_TOL};
use bpire_core::mc::{Engine, SeedSpec};
use bpire_core::tilt::{direct_estimate_a, is_estimate_a, IsConfig};
use bpire_core::walk::{functionals, WalkPath};
use bpire_core::{cli, exact, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidLaw(_) | Error::IndexError { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn engine(workers: Option<usize>) -> Engine {
    workers.map_or_else(Engine::from_env, Engine::new)
}

/// Monte Carlo estimate with a 95% normal interval.
#[pyclass(name = "Estimate", frozen)]
struct PyEstimate {
    inner: bpire_core::mc::Estimate,
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean
    }

    #[getter]
    fn stderr(&self) -> f64 {
        self.inner.stderr
    }

    #[getter]
    fn n_samples(&self) -> u64 {
        self.inner.n_samples
    }

    #[getter]
    fn ci95(&self) -> (f64, f64) {
        self.inner.ci95
    }

    /// `ln(mean)`, available even when `mean` underflows.
    #[getter]
    fn log_mean(&self) -> Option<f64> {
        self.inner.log_mean.or_else(|| (self.inner.mean > 0.0).then(|| self.inner.mean.ln()))
    }

    fn ci_overlaps(&self, other: &PyEstimate) -> bool {
        self.inner.ci_overlaps(&other.inner)
    }

    fn __repr__(&self) -> String {
        format!("Estimate(mean={:e}, stderr={:e}, n_samples={})", self.inner.mean, self.inner.stderr, self.inner.n_samples)
    }
}

/// Law of the environment increments `X = log E[offspring]`.
#[pyclass(name = "IncrementLaw", frozen)]
struct PyLaw {
    inner: IncrementLaw,
    regime: RegimeClass,
}

impl PyLaw {
    fn build(family: Family) -> PyResult<Self> {
        let inner = IncrementLaw::new(family).map_err(to_py)?;
        let regime = classify_regime(&inner, CLOSED_FORM_TOL).map_err(to_py)?;
        Ok(PyLaw { inner, regime })
    }
}

#[pymethods]
impl PyLaw {
    #[staticmethod]
    fn gaussian(mu: f64, sigma2: f64) -> PyResult<Self> {
        Self::build(Family::Gaussian { mu, sigma2 })
    }

    #[staticmethod]
    fn two_point(x_minus: f64, x_plus: f64, p_plus: f64) -> PyResult<Self> {
        Self::build(Family::TwoPoint { x_minus, x_plus, p_plus })
    }

    #[staticmethod]
    fn shifted_exponential(rate: f64, shift: f64) -> PyResult<Self> {
        Self::build(Family::ShiftedExponential { rate, shift })
    }

    #[staticmethod]
    fn degenerate(value: f64) -> PyResult<Self> {
        Self::build(Family::Degenerate { value })
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    /// `"strong"`, `"intermediate"` or `"weak"`.
    #[getter]
    fn regime(&self) -> &'static str {
        self.regime.kind.name()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.regime.delta
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.regime.gamma
    }

    fn __repr__(&self) -> String {
        format!("IncrementLaw({:?}, regime={})", self.inner.family(), self.regime.kind.name())
    }
}

/// Survival probability at generation `n` of the clan founded at `i`,
/// given the environment increments `X_1..X_n`.
#[pyfunction]
fn clan_survival_prob(increments: Vec<f64>, i: usize, n: usize) -> PyResult<f64> {
    let f = functionals(&WalkPath::from_increments(0.0, increments));
    exact::clan_survival_prob(&f, i, n).map_err(to_py)
}

/// `[H_{0,n}, .., H_{n-1,n}]` for `n = len(increments)`.
#[pyfunction]
fn clan_survival_all(increments: Vec<f64>) -> PyResult<Vec<f64>> {
    let n = increments.len();
    let f = functionals(&WalkPath::from_increments(0.0, increments));
    exact::clan_survival_all(&f, n).map_err(to_py)
}

/// Tilted importance-sampling estimate of the probability that the clan
/// founded at `i` is alive at `n`.
#[pyfunction]
#[pyo3(signature = (law, i, n, n_samples, seed=0, workers=None))]
fn is_estimate(py: Python<'_>, law: &PyLaw, i: usize, n: usize, n_samples: usize, seed: u64, workers: Option<usize>) -> PyResult<PyEstimate> {
    let cfg = IsConfig::new(n_samples, SeedSpec::new(seed, 0));
    let (l, r) = (law.inner.clone(), law.regime);
    py.detach(|| is_estimate_a(&l, &r, i, n, &cfg, &engine(workers)))
        .map(|inner| PyEstimate { inner })
        .map_err(to_py)
}

/// Plain Monte Carlo average of the exact survival probability over
/// sampled environments.
#[pyfunction]
#[pyo3(signature = (law, i, n, n_samples, seed=0, workers=None))]
fn direct_estimate(py: Python<'_>, law: &PyLaw, i: usize, n: usize, n_samples: usize, seed: u64, workers: Option<usize>) -> PyResult<PyEstimate> {
    let l = law.inner.clone();
    py.detach(|| direct_estimate_a(&l, i, n, n_samples, SeedSpec::new(seed, 0), &engine(workers)))
        .map(|inner| PyEstimate { inner })
        .map_err(to_py)
}

/// Runs an experiment given as TOML text; returns `(csv, pass, flags)`.
#[pyfunction]
#[pyo3(signature = (spec, workers=None))]
fn run_spec(py: Python<'_>, spec: &str, workers: Option<usize>) -> PyResult<(String, bool, Vec<(String, bool)>)> {
    let spec = cli::ExperimentSpec::parse(spec).map_err(to_py)?;
    let rep = py.detach(|| cli::execute(&spec, &engine(workers))).map_err(to_py)?;
    Ok((rep.table.to_csv(), rep.pass, rep.flags.into_iter().collect()))
}

#[pymodule]
fn bpire(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyLaw>()?;
    m.add_function(wrap_pyfunction!(clan_survival_prob, m)?)?;
    m.add_function(wrap_pyfunction!(clan_survival_all, m)?)?;
    m.add_function(wrap_pyfunction!(is_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(direct_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_spec, m)?)?;
    Ok(())
}
