//! Python bindings: delay measures, noise models, the rate function and the
//! exit problems.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use ddeldp::dde_core::{verify_instability, PathGrid, Segment};
use ddeldp::experiments::{run_exit_experiment, ExitExperiment};
use ddeldp::ldp_rate::{action, quasipotential as qp};
use ddeldp::linear_fast::{optimal_exit_analytic, LinearExitProblem};
use ddeldp::spectral::build_spectral_data;

create_exception!(ddeldp_py, DdeldpError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    DdeldpError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<PyObject> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any().unbind(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(to_py(py, x)?)?;
            }
            list.into_any().unbind()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any().unbind()
        }
    })
}

fn serialize(py: Python<'_>, v: &impl serde::Serialize) -> PyResult<PyObject> {
    to_py(py, &serde_json::to_value(v).map_err(err)?)
}

/// `L0 η = Σ A_k η(θ_k) + ∫ A(θ) η(θ) dθ`.
#[pyclass(module = "ddeldp_py")]
#[derive(Clone)]
struct DelayMeasure {
    inner: ddeldp::dde_core::DelayMeasure,
}

#[pymethods]
impl DelayMeasure {
    /// Scalar measure from `(theta, weight)` point masses.
    #[staticmethod]
    fn scalar(max_delay: f64, masses: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(Self { inner: ddeldp::dde_core::DelayMeasure::scalar(max_delay, &masses).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: serde_json::from_str(text).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn max_delay(&self) -> f64 {
        self.inner.max_delay()
    }

    /// Instability report: roots, spectral gap, violation.
    #[pyo3(signature = (search_depth = 5.0, margin = 0.5))]
    fn verify_instability(&self, py: Python<'_>, search_depth: f64, margin: f64) -> PyResult<PyObject> {
        serialize(py, &verify_instability(&self.inner, search_depth, margin).map_err(err)?)
    }

    /// Spectral data `c`, `Φ(0)`, `Ψ̂` of the zero root.
    #[pyo3(signature = (search_depth = 5.0, margin = 0.5))]
    fn spectral_data(&self, py: Python<'_>, search_depth: f64, margin: f64) -> PyResult<PyObject> {
        let rep = verify_instability(&self.inner, search_depth, margin).map_err(err)?;
        serialize(py, &build_spectral_data(&self.inner, &rep).map_err(err)?)
    }

    /// `x(T)` of the unperturbed equation from a constant history.
    fn solve_constant(&self, value: Vec<f64>, horizon: f64, dt: f64) -> PyResult<Vec<f64>> {
        let seg = Segment::constant(self.inner.max_delay(), dt, &value.into()).map_err(err)?;
        let path = ddeldp::dde_core::solve_deterministic(&self.inner, &seg, horizon, dt).map_err(err)?;
        Ok(path.last_row().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("DelayMeasure(dim={}, max_delay={})", self.inner.dim(), self.inner.max_delay())
    }
}

/// Finite-state Markov chain with scalar mean-zero output.
#[pyclass(module = "ddeldp_py")]
#[derive(Clone)]
struct NoiseModel {
    inner: ddeldp::markov_noise::MarkovNoiseModel,
}

#[pymethods]
impl NoiseModel {
    #[new]
    fn new(generator: Vec<Vec<f64>>, sigma: Vec<f64>) -> PyResult<Self> {
        let fields = serde_json::json!({ "generator": generator, "sigma": sigma });
        Ok(Self { inner: serde_json::from_value(fields).map_err(err)? })
    }

    /// `σ = ±σ₀` switching at rate `g/2`.
    #[staticmethod]
    fn two_state(g: f64, sigma0: f64) -> PyResult<Self> {
        Ok(Self { inner: ddeldp::markov_noise::MarkovNoiseModel::two_state_symmetric(g, sigma0).map_err(err)? })
    }

    #[getter]
    fn stationary(&self) -> Vec<f64> {
        self.inner.stationary().to_vec()
    }

    #[getter]
    fn sigma(&self) -> Vec<f64> {
        self.inner.sigma().to_vec()
    }

    /// `H_F(α)` with coefficient `coef`.
    #[pyo3(signature = (alpha, coef = 1.0))]
    fn hamiltonian(&self, alpha: f64, coef: f64) -> PyResult<f64> {
        self.inner.hf_matrix_eigenvalue(alpha, coef).map_err(err)
    }

    /// Jump times and states of a path on `[0, horizon]`.
    fn sample_path(&self, horizon: f64, seed: u64) -> PyResult<(Vec<f64>, Vec<usize>)> {
        let p = self.inner.sample_path(horizon, seed).map_err(err)?;
        Ok((p.jump_times, p.states))
    }
}

/// Scalar reduced dynamics `ż = drift(z) + coef(z)·σ(ξ)` and its rate
/// function.
#[pyclass(module = "ddeldp_py")]
struct RateModel {
    inner: ddeldp::ldp_rate::RateModel,
}

#[pymethods]
impl RateModel {
    /// Drift and coefficient given as JSON field specs, e.g.
    /// `{"kind": "linear", "slope": -1, "intercept": 0}`.
    #[new]
    #[pyo3(signature = (noise, drift = None, coefficient = None))]
    fn new(noise: &NoiseModel, drift: Option<&str>, coefficient: Option<&str>) -> PyResult<Self> {
        use ddeldp::ldp_rate::ScalarField;
        let parse = |s: Option<&str>, default: f64| -> PyResult<ScalarField> {
            match s {
                Some(t) => serde_json::from_str(t).map_err(err),
                None => Ok(ScalarField::Constant { value: default }),
            }
        };
        Ok(Self {
            inner: ddeldp::ldp_rate::RateModel::from_fields(parse(drift, 0.0)?, parse(coefficient, 1.0)?, noise.inner.clone()),
        })
    }

    fn hamiltonian(&self, z: f64, alpha: f64) -> PyResult<f64> {
        self.inner.hamiltonian(z, alpha).map_err(err)
    }

    /// `L(z, β)`; `inf` outside the attainable velocities.
    fn lagrangian(&self, z: f64, beta: f64) -> PyResult<f64> {
        self.inner.lagrangian(z, beta).map_err(err)
    }

    fn velocity_range(&self, z: f64) -> (f64, f64) {
        self.inner.velocity_range(z)
    }

    /// Action of the path `(times, values)`.
    fn action(&self, times: Vec<f64>, values: Vec<f64>) -> PyResult<f64> {
        let phi = PathGrid::from_parts(1, times, values).map_err(err)?;
        action(&self.inner, &phi).map_err(err)
    }

    /// `V(t, a, b)` and the optimal control.
    #[pyo3(signature = (t, a, b, grid_size = 64))]
    fn quasipotential(&self, py: Python<'_>, t: f64, a: f64, b: f64, grid_size: usize) -> PyResult<PyObject> {
        let r = qp(&self.inner, t, a, b, grid_size).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("value", r.value)?;
        d.set_item("feasible", r.feasible)?;
        d.set_item("endpoint_residual", r.endpoint_residual)?;
        d.set_item("times", r.control.times)?;
        d.set_item("u", r.control.u)?;
        d.set_item("phi", r.control.phi)?;
        Ok(d.into_any().unbind())
    }
}

/// Analytic optimal exit for a linear scalar equation from a constant
/// history `eta0`.
#[pyfunction]
#[pyo3(signature = (measure, g, sigma0, t, eta0, b, dt = 0.001))]
fn linear_exit(py: Python<'_>, measure: &DelayMeasure, g: f64, sigma0: f64, t: f64, eta0: f64, b: f64, dt: f64) -> PyResult<PyObject> {
    let eta = Segment::constant(measure.inner.max_delay(), dt, &vec![eta0].into()).map_err(err)?;
    let p = LinearExitProblem { measure: measure.inner.clone(), g, sigma0, t, eta, b };
    let sol = optimal_exit_analytic(&p, dt).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("value", sol.value)?;
    d.set_item("rho", sol.rho)?;
    d.set_item("feasible", sol.feasible)?;
    d.set_item("gap", sol.gap)?;
    d.set_item("reach", sol.reach)?;
    d.set_item("endpoint_error", sol.endpoint_error)?;
    d.set_item("stationarity_residual", sol.stationarity_residual)?;
    d.set_item("u", sol.control.column(0))?;
    Ok(d.into_any().unbind())
}

/// Monte Carlo exit experiment from its JSON description.
#[pyfunction]
fn mc_exit(py: Python<'_>, config_json: &str) -> PyResult<PyObject> {
    let exp: ExitExperiment = serde_json::from_str(config_json).map_err(err)?;
    let fit = py.allow_threads(|| run_exit_experiment(&exp)).map_err(err)?;
    serialize(py, &fit)
}

#[pymodule]
fn ddeldp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DdeldpError", m.py().get_type::<DdeldpError>())?;
    m.add_class::<DelayMeasure>()?;
    m.add_class::<NoiseModel>()?;
    m.add_class::<RateModel>()?;
    m.add_function(wrap_pyfunction!(linear_exit, m)?)?;
    m.add_function(wrap_pyfunction!(mc_exit, m)?)?;
    Ok(())
}
