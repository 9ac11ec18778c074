//! Python bindings: deposits, the one-shot and closed-loop runners, the
//! experiment grid and the ES-MDA update.
//!
//! Structured results are returned as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use mineplan_core::belief::esmda_update as core_esmda_update;
use mineplan_core::economics::expectation_reality_gap as core_gap;
use mineplan_core::error::Error;
use mineplan_core::experiment::{self, cell_inputs, RunConfig};
use mineplan_core::pomdp_engine::{run_oneshot as core_oneshot, run_pomdp_episode};
use mineplan_core::seed;

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Round-trips a serializable value through `json.loads`.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Run configuration. Built from a JSON document; omitted keys take their
/// defaults and unknown keys are rejected.
#[pyclass(module = "mineplan", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: RunConfig,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(text) => RunConfig::from_json(text).map_err(err)?,
            None => RunConfig::default(),
        };
        Ok(Config { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let d = self.inner.experiment.deposit.dims;
        format!("Config(seed={}, dims={}x{}x{})", self.inner.seed, d.nx, d.ny, d.nz)
    }
}

/// Block model, drillholes and realization ensemble with its hidden truth.
#[pyclass(module = "mineplan")]
struct Deposit {
    inner: experiment::Deposit,
    config: RunConfig,
}

#[pymethods]
impl Deposit {
    #[staticmethod]
    fn generate(py: Python<'_>, config: &Config) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let ex = &cfg.experiment;
        let inner = py
            .detach(|| experiment::genesis(&ex.deposit, ex.n_realizations, cfg.seed))
            .map_err(err)?;
        Ok(Deposit { inner, config: cfg })
    }

    #[staticmethod]
    fn load(path: PathBuf, config: &Config) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let inner = experiment::read_deposit(&path, &cfg.experiment.deposit).map_err(err)?;
        Ok(Deposit { inner, config: cfg })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        experiment::write_deposit(&path, &self.config.experiment.deposit, &self.inner)
            .map(|_| ())
            .map_err(err)
    }

    #[getter]
    fn n_blocks(&self) -> usize {
        self.inner.model.len()
    }

    #[getter]
    fn n_realizations(&self) -> usize {
        self.inner.ensemble.realizations.len()
    }

    #[getter]
    fn truth_index(&self) -> usize {
        self.inner.ensemble.truth_index
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Blocks as a list of dicts with ids, grid indices, centroids,
    /// tonnage and zone.
    fn blocks(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.model.blocks())
    }

    /// Hidden true grades as `{"cu": [...], "au": [...]}`.
    fn truth(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, self.inner.truth())
    }

    /// Ensemble-mean grades of the prior belief.
    fn prior_mean(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.prior().map_err(err)?.mean_field())
    }

    fn __repr__(&self) -> String {
        format!(
            "Deposit(n_blocks={}, n_realizations={}, truth_index={})",
            self.n_blocks(),
            self.n_realizations(),
            self.truth_index()
        )
    }
}

/// One-shot life-of-mine schedule executed under the truth.
#[pyfunction]
#[pyo3(signature = (deposit, alpha = 1.0))]
fn run_oneshot(py: Python<'_>, deposit: &Deposit, alpha: f64) -> PyResult<Py<PyAny>> {
    let ex = &deposit.config.experiment;
    let d = &deposit.inner;
    let out = py
        .detach(|| {
            let inputs = cell_inputs(d, alpha, alpha != 1.0, ex.truth_in_oneshot_only)?;
            let params = ex.sa_baseline.clone().with_seed(seed::derive(d.seed, &[seed::tag::ONESHOT]));
            let r = core_oneshot(&d.model, &inputs.oneshot_prior, &inputs.truth, &ex.econ, &params)?;
            let gap = r.gap()?;
            Ok::<_, Error>(serde_json::json!({
                "expected": r.expected_npv,
                "expected_std": r.expected_std,
                "realized": r.realized_npv,
                "gap": gap,
                "schedule": r.schedule.actions,
            }))
        })
        .map_err(err)?;
    to_py(py, &out)
}

/// Closed-loop episode. `max_epochs` stops early; the result then covers
/// only the executed steps.
#[pyfunction]
#[pyo3(signature = (deposit, alpha = 1.0, max_epochs = None))]
fn run_pomdp(py: Python<'_>, deposit: &Deposit, alpha: f64, max_epochs: Option<usize>) -> PyResult<Py<PyAny>> {
    let ex = &deposit.config.experiment;
    let d = &deposit.inner;
    let mut cfg = ex.pomdp.clone();
    if max_epochs.is_some() {
        cfg.max_epochs = max_epochs;
    }
    let traj = py
        .detach(|| {
            let inputs = cell_inputs(d, alpha, alpha != 1.0, ex.truth_in_oneshot_only)?;
            let s = seed::derive(d.seed, &[seed::tag::POMDP]);
            run_pomdp_episode(&d.model, &inputs.truth, &inputs.pomdp_prior, &ex.econ, &cfg, s).map_err(Error::from)
        })
        .map_err(err)?;
    let gap = if traj.realized_npv != 0.0 {
        Some(traj.gap().map_err(err)?)
    } else {
        None
    };
    to_py(
        py,
        &serde_json::json!({
            "expected": traj.expected_npv,
            "realized": traj.realized_npv,
            "gap": gap,
            "initial_q": traj.initial_q,
            "steps": traj.steps,
        }),
    )
}

/// Paired one-shot and closed-loop runs over replicates. Any alpha other
/// than 1 turns the grid into a misspecification sweep.
#[pyfunction]
#[pyo3(signature = (config, alphas = None))]
fn run_experiment(py: Python<'_>, config: &Config, alphas: Option<Vec<f64>>) -> PyResult<Py<PyAny>> {
    let mut cfg = config.inner.clone();
    if let Some(a) = alphas {
        cfg.experiment.alphas = a;
        cfg.validate().map_err(err)?;
    }
    let report = py
        .detach(|| {
            if cfg.experiment.alphas.iter().any(|&a| a != 1.0) {
                experiment::misspec_sweep(&cfg.experiment, cfg.seed, None)
            } else {
                experiment::base_case(&cfg.experiment, cfg.seed, None)
            }
        })
        .map_err(err)?;
    to_py(py, &report.summary_json().map_err(err)?)
}

/// ES-MDA on an ensemble of parameter vectors where each observation reads
/// one parameter directly. Returns the updated ensemble.
#[pyfunction]
#[pyo3(signature = (members, obs_index, d_obs, obs_std, inflation, seed = 0))]
fn esmda_update(
    mut members: Vec<Vec<f64>>,
    obs_index: Vec<usize>,
    d_obs: Vec<f64>,
    obs_std: Vec<f64>,
    inflation: Vec<f64>,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    if d_obs.len() != obs_index.len() || obs_std.len() != obs_index.len() {
        return Err(PyValueError::new_err("obs_index, d_obs and obs_std must have equal length"));
    }
    let np = members.first().map_or(0, Vec::len);
    if members.iter().any(|m| m.len() != np) || obs_index.iter().any(|&i| i >= np) {
        return Err(PyValueError::new_err("ragged ensemble or observation index out of range"));
    }
    let mut rng = seed::rng(seed);
    core_esmda_update(&mut members, &obs_index, &d_obs, &obs_std, &inflation, None, &mut rng).map_err(err)?;
    Ok(members)
}

/// (expected - realized) / realized.
#[pyfunction]
fn expectation_reality_gap(expected: f64, realized: f64) -> PyResult<f64> {
    core_gap(expected, realized).map_err(err)
}

#[pymodule]
fn mineplan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Deposit>()?;
    m.add_function(wrap_pyfunction!(run_oneshot, m)?)?;
    m.add_function(wrap_pyfunction!(run_pomdp, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(esmda_update, m)?)?;
    m.add_function(wrap_pyfunction!(expectation_reality_gap, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
