//! Python bindings: kernel tables, simulation, estimation, input design,
//! Fisher information, Laplace transforms and Monte Carlo studies.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use mfou::design::{fisher_breakdown, optimal_v};
use mfou::estimator::{
    asymptotic_fisher as fisher_limit, mle, theoretical_variance as var_limit, Regime,
};
use mfou::kernel::{default_cache_dir, lambda_h as lambda};
use mfou::laplace::{gamma_z_laplace, kat_limit as kat, psi_laplace};
use mfou::mc::{run_study_with_kernel, InputSpec, McConfig};
use mfou::process::{compute_q_derivative, transform_z};
use mfou::{HurstParam, KernelBundle, NoiseSampler, PathBundle, QForm, TimeGrid};

fn to_py(e: mfou::Error) -> PyErr {
    match e {
        mfou::Error::Domain(_) | mfou::Error::Dimension { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn input_spec(input: &Bound<'_, PyAny>, alpha: f64) -> PyResult<InputSpec> {
    if let Ok(name) = input.extract::<String>() {
        return match name.as_str() {
            "zero" => Ok(InputSpec::Zero),
            "constant" => Ok(InputSpec::Constant { alpha }),
            "optimal" => Ok(InputSpec::Optimal),
            other => Err(PyValueError::new_err(format!(
                "input must be 'zero', 'constant', 'optimal' or a list of u values, got '{other}'"
            ))),
        };
    }
    let u: Vec<f64> = input.extract()?;
    Ok(InputSpec::Tabulated { u })
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_u64() {
            Some(i) if !n.is_f64() => i.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

/// Kernel tables on a uniform grid of `steps` cells over `[0, horizon]`.
#[pyclass(name = "Kernel")]
struct PyKernel {
    inner: KernelBundle,
}

#[pymethods]
impl PyKernel {
    /// With `cache=True` the tables are read from / written to `$MFOU_CACHE_DIR`.
    #[new]
    #[pyo3(signature = (hurst, horizon, steps, cache = false))]
    fn new(hurst: f64, horizon: f64, steps: usize, cache: bool) -> PyResult<Self> {
        let h = HurstParam::new(hurst).map_err(to_py)?;
        let grid = TimeGrid::new(horizon, steps).map_err(to_py)?;
        let inner = if cache {
            KernelBundle::load_or_build(&grid, h, &default_cache_dir())
        } else {
            KernelBundle::build(&grid, h)
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn hurst(&self) -> f64 {
        self.inner.hurst.value()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.grid.n_steps()
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.inner.grid.nodes()
    }

    /// `<M>_t` at the nodes.
    #[getter]
    fn m(&self) -> Vec<f64> {
        self.inner.m.clone()
    }

    #[getter]
    fn m_prime(&self) -> Vec<f64> {
        self.inner.m_prime.clone()
    }

    /// `ψ(t,t) = 1/m'(t)`.
    #[getter]
    fn psi(&self) -> Vec<f64> {
        self.inner.psi_diag.clone()
    }

    #[getter]
    fn cache_key(&self) -> String {
        KernelBundle::cache_key(&self.inner.grid, self.inner.hurst)
    }

    /// `g(·, t_j)` on the cells `0..j`.
    fn g_row(&self, j: usize) -> PyResult<Vec<f64>> {
        if j > self.steps() {
            return Err(PyValueError::new_err(format!("row {j} out of range")));
        }
        Ok(self.inner.g().row(j).to_vec())
    }

    fn plug_back_residual(&self, j: usize) -> PyResult<Vec<f64>> {
        if j > self.steps() {
            return Err(PyValueError::new_err(format!("row {j} out of range")));
        }
        Ok(self.inner.plug_back_residual(j))
    }

    /// `(u, v)` of the optimal input.
    fn optimal_input(&mut self) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let input = InputSpec::Optimal.build(&mut self.inner).map_err(to_py)?;
        let u = input.u().map_err(to_py)?.to_vec();
        Ok((u, input.v))
    }

    /// Dictionary of path columns `t, xi, X, Z, Q, M`.
    #[pyo3(signature = (theta, seed, input = None, alpha = 1.0))]
    fn simulate<'py>(
        &mut self,
        py: Python<'py>,
        theta: f64,
        seed: u64,
        input: Option<&Bound<'py, PyAny>>,
        alpha: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let spec = match input {
            Some(i) => input_spec(i, alpha)?,
            None => InputSpec::Constant { alpha },
        };
        let signal = spec.build(&mut self.inner).map_err(to_py)?;
        let sampler = NoiseSampler::new(&self.inner.grid, self.inner.hurst).map_err(to_py)?;
        let path = PathBundle::simulate(
            &sampler.sample(seed),
            theta,
            &signal,
            &self.inner,
            QForm::default(),
        )
        .map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("t", self.inner.grid.nodes())?;
        out.set_item("xi", path.xi)?;
        out.set_item("X", path.x)?;
        out.set_item("Z", path.z)?;
        out.set_item("Q", path.q)?;
        out.set_item("M", path.m)?;
        Ok(out)
    }

    /// Maximum likelihood estimate of θ from an observed path `x`.
    #[pyo3(signature = (x, input = None, alpha = 1.0))]
    fn estimate(
        &mut self,
        x: Vec<f64>,
        input: Option<&Bound<'_, PyAny>>,
        alpha: f64,
    ) -> PyResult<f64> {
        let spec = match input {
            Some(i) => input_spec(i, alpha)?,
            None => InputSpec::Constant { alpha },
        };
        let signal = spec.build(&mut self.inner).map_err(to_py)?;
        let z = transform_z(&x, &self.inner).map_err(to_py)?;
        let q = compute_q_derivative(&x, &self.inner).map_err(to_py)?;
        Ok(mle(&z, &q, &signal, &self.inner).map_err(to_py)?.theta_hat)
    }

    /// `{"I1", "I2", "total", "asymptotic"}`.
    #[pyo3(signature = (theta, input = None, alpha = 1.0))]
    fn fisher<'py>(
        &mut self,
        py: Python<'py>,
        theta: f64,
        input: Option<&Bound<'py, PyAny>>,
        alpha: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let spec = match input {
            Some(i) => input_spec(i, alpha)?,
            None => InputSpec::Optimal,
        };
        let signal = spec.build(&mut self.inner).map_err(to_py)?;
        let f = fisher_breakdown(&signal, theta, &self.inner).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("I1", f.i1)?;
        out.set_item("I2", f.i2)?;
        out.set_item("total", f.total)?;
        out.set_item("asymptotic", f.asymptotic)?;
        Ok(out)
    }

    /// `log E exp(−(μ/T) ∫ Q² d<M>)`; the default input is `v = √ψ`.
    #[pyo3(signature = (mu, theta, input = None, alpha = 1.0))]
    fn log_laplace(
        &mut self,
        mu: f64,
        theta: f64,
        input: Option<&Bound<'_, PyAny>>,
        alpha: f64,
    ) -> PyResult<f64> {
        let signal = match input {
            Some(i) => input_spec(i, alpha)?
                .build(&mut self.inner)
                .map_err(to_py)?,
            None => optimal_v(&self.inner),
        };
        Ok(gamma_z_laplace(mu, theta, &signal, &self.inner)
            .map_err(to_py)?
            .log_value())
    }

    /// `log L_T(a)` from the Ψ system.
    fn log_psi_laplace(&self, a: f64, theta: f64) -> PyResult<f64> {
        Ok(psi_laplace(a, theta, &self.inner).map_err(to_py)?.log_value)
    }

    fn __repr__(&self) -> String {
        format!(
            "Kernel(hurst={}, horizon={}, steps={})",
            self.hurst(),
            self.horizon(),
            self.steps()
        )
    }
}

/// Monte Carlo study of `√T(θ̂ − θ)`; returns the summary with a
/// `replications` list of per-replication dictionaries.
#[pyfunction]
#[pyo3(signature = (hurst, theta, horizon, steps, reps, seed, input = None, alpha = 1.0))]
#[allow(clippy::too_many_arguments)]
fn run_study<'py>(
    py: Python<'py>,
    hurst: f64,
    theta: f64,
    horizon: f64,
    steps: usize,
    reps: usize,
    seed: u64,
    input: Option<&Bound<'py, PyAny>>,
    alpha: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let config = McConfig {
        hurst,
        theta,
        input: match input {
            Some(i) => input_spec(i, alpha)?,
            None => InputSpec::Constant { alpha },
        },
        horizon,
        n_steps: steps,
        n_reps: reps,
        seed,
        q_form: QForm::default(),
    };
    let (h, grid) = config.validate().map_err(to_py)?;
    let summary = py
        .detach(|| {
            let mut kernel = KernelBundle::load_or_build(&grid, h, &default_cache_dir())?;
            run_study_with_kernel(&config, &mut kernel)
        })
        .map_err(to_py)?;
    let mut doc =
        serde_json::to_value(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    doc["replications"] = serde_json::to_value(&summary.replications)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &doc)
}

/// `𝓘(θ) = 1/(2θ) + 1/θ²`.
#[pyfunction]
fn asymptotic_fisher(theta: f64) -> PyResult<f64> {
    fisher_limit(theta).map_err(to_py)
}

/// Limiting variance of `√T(θ̂ − θ)` for `regime` in {"constant", "optimal"}.
#[pyfunction]
#[pyo3(signature = (hurst, theta, alpha = 1.0, regime = "constant"))]
fn theoretical_variance(hurst: f64, theta: f64, alpha: f64, regime: &str) -> PyResult<f64> {
    let regime = match regime {
        "constant" => Regime::Constant,
        "optimal" => Regime::Optimal,
        other => return Err(PyValueError::new_err(format!("unknown regime '{other}'"))),
    };
    var_limit(HurstParam::new(hurst).map_err(to_py)?, theta, alpha, regime).map_err(to_py)
}

#[pyfunction]
fn lambda_h(hurst: f64) -> PyResult<f64> {
    lambda(hurst).map_err(to_py)
}

#[pyfunction]
fn kat_limit(mu: f64, theta: f64) -> PyResult<f64> {
    kat(mu, theta).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "mfou")]
fn mfou_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", mfou::VERSION)?;
    m.add_class::<PyKernel>()?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_function(wrap_pyfunction!(asymptotic_fisher, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_variance, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_h, m)?)?;
    m.add_function(wrap_pyfunction!(kat_limit, m)?)?;
    Ok(())
}
