//! Python bindings: problems, local search runs, enumeration, big-M solves
//! and local certification.

use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smc::local::{dca_run, ram_run, Schedule, Weights};
use smc::micp::{self, Budget, CertifyOptions};
use smc::problems;
use smc::smc::{SmcProblem, DEFAULT_ENUM_CAP};
use smc::subsolve::{FeasibleSet, SolverConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Serializable value to Python objects through the json module.
fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Problem", module = "smc_py")]
pub struct PyProblem {
    inner: SmcProblem,
}

#[pymethods]
impl PyProblem {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        SmcProblem::from_json(text)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    /// One of `toy_names()`.
    #[staticmethod]
    fn toy(name: &str) -> PyResult<Self> {
        problems::toy_library()
            .remove(name)
            .map(|inner| Self { inner })
            .ok_or_else(|| value_err(format!("unknown toy `{name}`")))
    }

    #[staticmethod]
    fn toy_names() -> Vec<String> {
        problems::toy_library().into_keys().collect()
    }

    #[staticmethod]
    #[pyo3(signature = (n, p, b1, b2, l_box=10.0, seed=0))]
    fn plr_synthetic(
        n: usize,
        p: usize,
        b1: usize,
        b2: usize,
        l_box: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = problems::plr_synthetic(n, p, b1, b2, l_box, seed);
        problems::plr_build(&spec)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (n, b, r_ref=2.0, lam=0.5, seed=0))]
    fn rfl_synthetic(n: usize, b: usize, r_ref: f64, lam: f64, seed: u64) -> PyResult<Self> {
        let spec = problems::rfl_synthetic(n, b, r_ref, lam, seed);
        problems::rfl_build(&spec)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes()
    }

    fn num_selections(&self) -> u128 {
        self.inner.num_selections()
    }

    fn objective(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_dim(&x)?;
        Ok(self.inner.objective(&x))
    }

    fn component_values(&self, x: Vec<f64>, s: usize) -> PyResult<Vec<f64>> {
        self.check_dim(&x)?;
        if s >= self.inner.num_terms() {
            return Err(value_err("term index out of range"));
        }
        Ok(self.inner.component_values(&x, s))
    }

    /// `(value, x, selection)` of the global optimum.
    #[pyo3(signature = (cap=DEFAULT_ENUM_CAP))]
    fn enumerate(&self, cap: u128) -> PyResult<(f64, Vec<f64>, Vec<usize>)> {
        let g = self
            .inner
            .enumerate_global(&SolverConfig::default(), cap)
            .map_err(runtime_err)?;
        Ok((g.value, g.x, g.sigma.0))
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem({}, dim={}, sizes={:?})",
            self.inner.name(),
            self.inner.dim(),
            self.inner.sizes()
        )
    }
}

impl PyProblem {
    fn check_dim(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.inner.dim() {
            return Err(value_err(format!(
                "expected {} coordinates, got {}",
                self.inner.dim(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// Relaxed alternating minimization from uniform random weights.
#[pyfunction]
#[pyo3(signature = (problem, method="am", seed=0, delta=1e-8, kmax=400))]
fn run<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    method: &str,
    seed: u64,
    delta: f64,
    kmax: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let p = &problem.inner;
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = Weights::sample_uniform(&p.sizes(), &mut rng);
    let t = if method == "dca" {
        let x0 = ram_run(p, &q, &Schedule::am(), delta, 1, &cfg, &mut rng)
            .map_err(runtime_err)?
            .best_x;
        dca_run(p, &x0, delta, kmax, &cfg)
    } else {
        let sched = Schedule::named(method)
            .ok_or_else(|| value_err(format!("unknown method `{method}`")))?;
        ram_run(p, &q, &sched, delta, kmax, &cfg, &mut rng)
    }
    .map_err(runtime_err)?;
    to_py(py, &t)
}

/// Big-M model with automatic gap bounds, solved by branch and bound.
#[pyfunction]
#[pyo3(signature = (problem, c=1.0, time_limit=120.0))]
fn solve_micp<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    c: f64,
    time_limit: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = SolverConfig::default();
    let bounds = micp::auto_sbounds(&problem.inner, &cfg).map_err(runtime_err)?;
    let model = micp::build_global_model(&problem.inner, &bounds, c).map_err(runtime_err)?;
    let budget = Budget {
        time_limit: Some(Duration::from_secs_f64(time_limit.max(0.0))),
        ..Budget::default()
    };
    to_py(
        py,
        &micp::solve_micp(&model, &budget, &cfg).map_err(runtime_err)?,
    )
}

/// Certify `x` on the box `[lo, hi]` or return a better point in it.
#[pyfunction]
#[pyo3(signature = (problem, x, lo, hi, delta_glob=5e-7, time_limit=120.0))]
fn certify<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    delta_glob: f64,
    time_limit: f64,
) -> PyResult<Bound<'py, PyAny>> {
    problem.check_dim(&x)?;
    let region = FeasibleSet::boxed(lo, hi).map_err(value_err)?;
    let opts = CertifyOptions {
        delta_glob,
        budget: Budget {
            time_limit: Some(Duration::from_secs_f64(time_limit.max(0.0))),
            ..Budget::default()
        },
        ..CertifyOptions::default()
    };
    let v = micp::certify_or_improve(
        &problem.inner,
        &x,
        &region,
        None,
        &opts,
        &SolverConfig::default(),
    )
    .map_err(runtime_err)?;
    to_py(py, &v)
}

#[pymodule]
pub fn smc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(solve_micp, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    Ok(())
}
