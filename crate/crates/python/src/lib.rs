//! Python bindings.
//!
//! Results with many fields (solutions, run reports) come back as plain
//! dictionaries built from the library's serialised form.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use whittle_aoi::fluid::{self, FluidRunOptions, FluidState};
use whittle_aoi::harness;
use whittle_aoi::policy::{self, ClassSpec};
use whittle_aoi::relaxed;
use whittle_aoi::sim::{self, InitialProportions, MuRule, Policy};

fn err(e: whittle_aoi::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_pyobject(py)?.into_any(),
            (None, Some(i)) => i.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn serialised<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Classes as `(p, gamma)` pairs in non-increasing `p`, plus the budget.
#[pyclass(name = "SystemConfig", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySystemConfig {
    inner: policy::SystemConfig,
}

#[pymethods]
impl PySystemConfig {
    #[new]
    fn new(classes: Vec<(f64, f64)>, alpha: f64) -> PyResult<Self> {
        let classes = classes
            .into_iter()
            .map(|(p, g)| ClassSpec::new(p, g))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let inner = policy::SystemConfig::new(classes, alpha).map_err(err)?;
        Ok(PySystemConfig { inner })
    }

    #[staticmethod]
    fn two_class(p1: f64, p2: f64, gamma1: f64, alpha: f64) -> PyResult<Self> {
        let inner = policy::SystemConfig::two_class(p1, p2, gamma1, alpha).map_err(err)?;
        Ok(PySystemConfig { inner })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn classes(&self) -> Vec<(f64, f64)> {
        self.inner.classes().iter().map(|c| (c.p, c.gamma)).collect()
    }

    fn __repr__(&self) -> String {
        format!("SystemConfig(classes={:?}, alpha={})", self.classes(), self.alpha())
    }
}

#[pyfunction]
fn whittle_index(p: f64, age: u64) -> PyResult<f64> {
    policy::whittle_index(p, age).map_err(err)
}

#[pyfunction]
fn active_fraction(p: f64, n: u64) -> PyResult<f64> {
    policy::active_fraction(p, n).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (p, n, lam = 0.0))]
fn threshold_average_cost(p: f64, n: u64, lam: f64) -> PyResult<f64> {
    policy::threshold_average_cost(p, n, lam).map_err(err)
}

/// `(probs, tail_mass)`; `probs[i]` is the mass at age `i + 1`.
#[pyfunction]
fn stationary_distribution(p: f64, n: u64, max_state: u64) -> PyResult<(Vec<f64>, f64)> {
    let d = policy::stationary_distribution(p, n, max_state).map_err(err)?;
    Ok((d.probs().to_vec(), d.tail_mass()))
}

#[pyfunction]
fn compute_d(p1: f64, p2: f64) -> PyResult<f64> {
    fluid::compute_d(p1, p2).map_err(err)
}

#[pyfunction]
fn assumption_bound(p1: f64, p2: f64) -> PyResult<f64> {
    fluid::assumption_bound(p1, p2).map_err(err)
}

#[pyfunction]
fn t_max(alpha: f64, p2: f64) -> PyResult<u64> {
    fluid::t_max(alpha, p2).map_err(err)
}

#[pyfunction]
fn convergence_certificate(py: Python<'_>, p1: f64, p2: f64, alpha: f64) -> PyResult<Bound<'_, PyAny>> {
    let c = fluid::ConvergenceCertificate::new(p1, p2, alpha).map_err(err)?;
    serialised(py, &c)
}

/// Rows of the budget-bound table; `paper=True` adds the reference pairs.
#[pyfunction]
#[pyo3(signature = (pairs = Vec::new(), paper = false))]
fn balpha_table(py: Python<'_>, pairs: Vec<(f64, f64)>, paper: bool) -> PyResult<Bound<'_, PyAny>> {
    let mut rows = if paper { harness::balpha_reference() } else { Vec::new() };
    let pairs: Vec<[f64; 2]> = pairs.into_iter().map(|(a, b)| [a, b]).collect();
    rows.extend(harness::balpha_rows(&pairs).map_err(err)?);
    serialised(py, &rows)
}

#[pyfunction]
fn solve_relaxed<'py>(py: Python<'py>, config: &PySystemConfig) -> PyResult<Bound<'py, PyAny>> {
    let sol = relaxed::solve_relaxed(&config.inner).map_err(err)?;
    let out = serialised(py, &sol)?;
    out.set_item("constraint_residual", sol.constraint_residual())?;
    Ok(out)
}

/// One fluid step from `classes[k][i]` (age `i + 1`); returns the next
/// proportions and the slot's decision.
#[pyfunction]
fn fluid_step<'py>(
    py: Python<'py>,
    config: &PySystemConfig,
    classes: Vec<Vec<f64>>,
) -> PyResult<(Vec<Vec<f64>>, Bound<'py, PyAny>)> {
    let z = FluidState::new(&config.inner, classes).map_err(err)?;
    let (next, d) = fluid::fluid_step(&z, &config.inner).map_err(err)?;
    Ok((next.classes().to_vec(), serialised(py, &d)?))
}

/// Runs the fluid map from `init` (`"zstar"`, `"all_age_one"`, `"random"`
/// or explicit proportions) and returns the run report without the
/// per-slot decisions.
#[pyfunction]
#[pyo3(signature = (config, init = None, horizon = 5000, tol = 1e-6, seed = 0, max_age = 20))]
fn run_fluid<'py>(
    py: Python<'py>,
    config: &PySystemConfig,
    init: Option<Bound<'py, PyAny>>,
    horizon: u64,
    tol: f64,
    seed: u64,
    max_age: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let sol = relaxed::solve_relaxed(&config.inner).map_err(err)?;
    let z0 = match init {
        None => FluidState::all_age_one(&config.inner),
        Some(obj) => {
            if let Ok(name) = obj.extract::<String>() {
                match name.as_str() {
                    "zstar" => FluidState::from_z_star(&sol),
                    "all_age_one" => FluidState::all_age_one(&config.inner),
                    "random" => FluidState::random(&config.inner, seed, max_age),
                    other => return Err(PyValueError::new_err(format!("unknown init `{other}`"))),
                }
            } else {
                FluidState::new(&config.inner, obj.extract::<Vec<Vec<f64>>>()?).map_err(err)?
            }
        }
    };
    let run = fluid::run_fluid(z0, &sol, horizon, tol, FluidRunOptions::default()).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("status", serialised(py, &run.status)?)?;
    out.set_item("converged_at", run.converged_at)?;
    out.set_item("distances", run.distances.clone())?;
    out.set_item("final_state", run.final_state.classes().to_vec())?;
    out.set_item("max_mass_drift", run.max_mass_drift)?;
    out.set_item("certificate", serialised(py, &run.certificate)?)?;
    out.set_item("audit", serialised(py, &run.audit)?)?;
    Ok(out.into_any())
}

fn parse_policy(name: &str) -> PyResult<Policy> {
    Ok(match name {
        "whittle" => Policy::Whittle,
        "mixed_threshold" => Policy::MixedThreshold,
        "max_age_greedy" => Policy::MaxAgeGreedy,
        other => return Err(PyValueError::new_err(format!("unknown policy `{other}`"))),
    })
}

#[pyfunction]
#[pyo3(signature = (config, n_users, horizon, seed = 0, policy = "whittle", burn_in_fraction = 0.1))]
fn simulate<'py>(
    py: Python<'py>,
    config: &PySystemConfig,
    n_users: usize,
    horizon: u64,
    seed: u64,
    policy: &str,
    burn_in_fraction: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = sim::SimConfig::new(config.inner.clone(), n_users, horizon, seed).with_policy(parse_policy(policy)?);
    cfg.burn_in_fraction = burn_in_fraction;
    let m = py.detach(|| sim::simulate(&cfg)).map_err(err)?;
    serialised(py, &m)
}

/// Whittle schedule for the given ages; returns the served user ids.
#[pyfunction]
fn whittle_schedule(ages: Vec<u64>, p: Vec<f64>, m: usize) -> PyResult<Vec<usize>> {
    if ages.len() != p.len() {
        return Err(PyValueError::new_err("ages and p must have the same length"));
    }
    if ages.contains(&0) {
        return Err(PyValueError::new_err("ages start at 1"));
    }
    Ok(sim::whittle_schedule(&ages, &p, m))
}

#[pyfunction]
#[pyo3(signature = (config, n_list, horizon, seeds, mu = None, mu_factor = 2.0))]
fn kurtz_experiment<'py>(
    py: Python<'py>,
    config: &PySystemConfig,
    n_list: Vec<usize>,
    horizon: u64,
    seeds: Vec<u64>,
    mu: Option<f64>,
    mu_factor: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let rule = mu.map_or(MuRule::MedianAtLargest(mu_factor), MuRule::Fixed);
    let x = InitialProportions::all_age_one(&config.inner);
    let r = py
        .detach(|| sim::kurtz_experiment(&config.inner, &x, &n_list, horizon, &seeds, rule))
        .map_err(err)?;
    serialised(py, &r)
}

#[pymodule]
#[pyo3(name = "whittle_aoi")]
fn whittle_aoi_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemConfig>()?;
    m.add_function(wrap_pyfunction!(whittle_index, m)?)?;
    m.add_function(wrap_pyfunction!(active_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_average_cost, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(compute_d, m)?)?;
    m.add_function(wrap_pyfunction!(assumption_bound, m)?)?;
    m.add_function(wrap_pyfunction!(t_max, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(balpha_table, m)?)?;
    m.add_function(wrap_pyfunction!(solve_relaxed, m)?)?;
    m.add_function(wrap_pyfunction!(fluid_step, m)?)?;
    m.add_function(wrap_pyfunction!(run_fluid, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(whittle_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(kurtz_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
