//! Python bindings for the chaos-expansion library.
//!
//! The module mirrors the Rust surface with thin wrappers: multi
//! indices and chaos vectors with their Wick algebra and weighted
//! norms, spectral densities and process models, the Wick-Ito
//! integral, and the three Ito-verifier regimes.  Reports cross the
//! boundary as plain dictionaries, so Python callers get the same
//! fields the JSON artifacts carry.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyString};
use serde_json::Value as JsonValue;

use wicknoise::chaos::{ChaosVector, Truncation};
use wicknoise::integrator::{
    convergence_study, reference_integral, riemann_sum, uniform_partition, IntegrandFn,
};
use wicknoise::ito;
use wicknoise::ito::PathwiseFn;
use wicknoise::multi_index::MultiIndex;
use wicknoise::process::ProcessModel;
use wicknoise::spectral_op::{r_of_t, r_prime, SpectralDensity};

fn py_err(err: wicknoise::Error) -> PyErr {
    if err.is_accuracy() {
        PyRuntimeError::new_err(err.to_string())
    } else {
        PyValueError::new_err(err.to_string())
    }
}

fn json_to_py(py: Python<'_>, value: &JsonValue) -> PyResult<Py<PyAny>> {
    Ok(match value {
        JsonValue::Null => py.None(),
        JsonValue::Bool(b) => PyBool::new(py, *b).to_owned().unbind().into_any(),
        JsonValue::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py).unwrap().unbind().into_any()
            } else {
                n.as_f64()
                    .unwrap_or(f64::NAN)
                    .into_pyobject(py)
                    .unwrap()
                    .unbind()
                    .into_any()
            }
        }
        JsonValue::String(s) => PyString::new(py, s).unbind().into_any(),
        JsonValue::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.unbind().into_any()
        }
        JsonValue::Object(map) => {
            let dict = PyDict::new(py);
            for (key, item) in map {
                dict.set_item(key, json_to_py(py, item)?)?;
            }
            dict.unbind().into_any()
        }
    })
}

fn report_to_py(py: Python<'_>, report: &ito::ItoReport) -> PyResult<Py<PyAny>> {
    let value = serde_json::to_value(report)
        .map_err(|e| PyRuntimeError::new_err(format!("report serialization: {e}")))?;
    json_to_py(py, &value)
}

/// Finitely supported exponent sequence indexing one chaos mode.
#[pyclass(frozen, name = "MultiIndex")]
struct PyMultiIndex {
    inner: MultiIndex,
}

#[pymethods]
impl PyMultiIndex {
    /// Build from a dense list `[a1, a2, ...]`; zeros are dropped.
    #[new]
    fn new(dense: Vec<u32>) -> PyResult<Self> {
        let pairs: Vec<(u32, u32)> = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(|(i, &v)| (i as u32 + 1, v))
            .collect();
        Ok(PyMultiIndex {
            inner: MultiIndex::from_pairs(&pairs).map_err(py_err)?,
        })
    }

    fn order(&self) -> u32 {
        self.inner.order()
    }

    fn dense(&self) -> Vec<u32> {
        self.inner.dense()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("MultiIndex(\"{}\")", self.inner)
    }
}

/// Truncated chaos expansion with Wick algebra and weighted norms.
#[pyclass(name = "ChaosVector", skip_from_py_object)]
#[derive(Clone)]
struct PyChaosVector {
    inner: ChaosVector,
}

#[pymethods]
impl PyChaosVector {
    #[staticmethod]
    fn constant(c: f64) -> Self {
        PyChaosVector {
            inner: ChaosVector::constant(c),
        }
    }

    #[staticmethod]
    fn first_order(coeffs: Vec<f64>) -> Self {
        PyChaosVector {
            inner: ChaosVector::first_order(&coeffs),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyChaosVector {
            inner: serde_json::from_str(text)
                .map_err(|e| PyValueError::new_err(format!("chaos vector parse: {e}")))?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner)
            .map_err(|e| PyRuntimeError::new_err(format!("chaos vector serialization: {e}")))
    }

    fn wick(&self, other: PyRef<PyChaosVector>) -> PyResult<Self> {
        Ok(PyChaosVector {
            inner: self.inner.wick(&other.inner).map_err(py_err)?,
        })
    }

    fn wick_power(&self, n: u32) -> PyResult<Self> {
        Ok(PyChaosVector {
            inner: self.inner.wick_power(n).map_err(py_err)?,
        })
    }

    fn add(&self, other: PyRef<PyChaosVector>) -> Self {
        PyChaosVector {
            inner: self.inner.add(&other.inner),
        }
    }

    fn sub(&self, other: PyRef<PyChaosVector>) -> Self {
        PyChaosVector {
            inner: self.inner.sub(&other.inner),
        }
    }

    fn scale(&self, factor: f64) -> Self {
        PyChaosVector {
            inner: self.inner.scale(factor),
        }
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn norm(&self, k: u32) -> f64 {
        self.inner.norm(k)
    }

    fn dual_norm(&self, k: u32) -> f64 {
        self.inner.dual_norm(k)
    }

    /// Sparse view as `[(index_text, coefficient), ...]` in canonical
    /// order.
    fn terms(&self) -> Vec<(String, f64)> {
        self.inner
            .terms()
            .iter()
            .map(|(alpha, coeff)| (alpha.to_string(), *coeff))
            .collect()
    }

    fn num_terms(&self) -> usize {
        self.inner.num_terms()
    }

    fn order(&self) -> u32 {
        self.inner.order()
    }

    fn __repr__(&self) -> String {
        format!(
            "ChaosVector({} terms, order {})",
            self.inner.num_terms(),
            self.inner.order()
        )
    }
}

/// Even spectral density selecting one process family.
#[pyclass(name = "SpectralDensity", skip_from_py_object)]
#[derive(Clone)]
struct PySpectralDensity {
    inner: SpectralDensity,
}

#[pymethods]
impl PySpectralDensity {
    /// Parse a preset tag: "white", "fbm:H=<x>", or "quartic".
    #[staticmethod]
    fn preset(tag: &str) -> PyResult<Self> {
        Ok(PySpectralDensity {
            inner: SpectralDensity::preset(tag).map_err(py_err)?,
        })
    }

    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    /// Variance function `r(t)` by spectral quadrature.
    fn variance(&self, t: f64) -> PyResult<f64> {
        r_of_t(t, &self.inner).map_err(py_err)
    }

    /// Derivative `r'(t)` by spectral quadrature.
    fn variance_derivative(&self, t: f64) -> PyResult<f64> {
        r_prime(t, &self.inner).map_err(py_err)
    }

    /// True when `r'` is singular at the origin.
    fn is_rough(&self) -> bool {
        self.inner.bound().singular_exp < 0.0
    }

    fn __repr__(&self) -> String {
        format!("SpectralDensity(\"{}\")", self.inner.name())
    }
}

/// Truncated-series model of the process and its noise.
#[pyclass(name = "ProcessModel")]
struct PyProcessModel {
    inner: ProcessModel,
}

#[pymethods]
impl PyProcessModel {
    #[new]
    fn new(density: PyRef<PySpectralDensity>, modes: u32, t_lo: f64, t_hi: f64) -> PyResult<Self> {
        Ok(PyProcessModel {
            inner: ProcessModel::build(&density.inner, modes, t_lo, t_hi).map_err(py_err)?,
        })
    }

    fn modes(&self) -> u32 {
        self.inner.modes()
    }

    fn dual_exponent(&self) -> u32 {
        self.inner.dual_exponent()
    }

    /// Truncated variance of the process at `t`.
    fn variance(&self, t: f64) -> PyResult<f64> {
        self.inner.variance(t).map_err(py_err)
    }

    /// Mode-limit estimate of the variance at `t`.
    fn variance_series_limit(&self, t: f64) -> PyResult<f64> {
        self.inner.variance_series_limit(t).map_err(py_err)
    }

    /// Spectral covariance `r(t) + r(s) - r(t-s)` (doubled
    /// normalization).
    fn covariance(&self, t: f64, s: f64) -> PyResult<f64> {
        self.inner.covariance(t, s).map_err(py_err)
    }

    /// Mode-limit estimate of `E[X(t)X(s)]`.
    fn covariance_series_limit(&self, t: f64, s: f64) -> PyResult<f64> {
        self.inner.covariance_series_limit(t, s).map_err(py_err)
    }

    fn x_coeffs(&self, t: f64) -> PyResult<Vec<f64>> {
        self.inner.x_coeffs(t).map_err(py_err)
    }

    /// The process at `t` as a first-order chaos vector.
    fn process_at(&self, t: f64) -> PyResult<PyChaosVector> {
        Ok(PyChaosVector {
            inner: self.inner.x_chaos(t).map_err(py_err)?,
        })
    }

    /// The noise at `t` as a first-order chaos vector.
    fn noise_at(&self, t: f64) -> PyResult<PyChaosVector> {
        Ok(PyChaosVector {
            inner: self.inner.w_chaos(t).map_err(py_err)?,
        })
    }

    /// Sampled paths, outer index the path; deterministic in `seed`.
    fn sample_paths(
        &self,
        times: Vec<f64>,
        n_paths: usize,
        seed: u64,
    ) -> PyResult<Vec<Vec<f64>>> {
        self.inner.sample_paths(&times, n_paths, seed).map_err(py_err)
    }

    /// Dual-norm error of the finite-difference derivative against
    /// the noise at step `h`.
    fn derivative_check(&self, t: f64, h: f64) -> PyResult<f64> {
        self.inner.derivative_check(t, h).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "ProcessModel(\"{}\", modes={})",
            self.inner.density().name(),
            self.inner.modes()
        )
    }
}

#[pyfunction]
fn version() -> &'static str {
    wicknoise::version()
}

/// Continuity constant of the Wick product across a dual-index gap.
#[pyfunction]
fn wick_bound_constant(gap: u32) -> PyResult<f64> {
    wicknoise::chaos::wick_bound_constant(gap).map_err(py_err)
}

/// Variance constant of the power-law preset at `t = 1`.
#[pyfunction]
fn fbm_variance_constant(h: f64) -> f64 {
    wicknoise::spectral_op::fbm_variance_constant(h)
}

/// Wick-Ito integral of the process over `[a, b]` with a uniform
/// `n`-step Riemann sum.
#[pyfunction]
#[pyo3(signature = (model, a, b, n = 1024))]
fn integrate_process(
    model: PyRef<PyProcessModel>,
    a: f64,
    b: f64,
    n: usize,
) -> PyResult<PyChaosVector> {
    let y = IntegrandFn::process(&model.inner);
    let partition = uniform_partition(a, b, n);
    Ok(PyChaosVector {
        inner: riemann_sum(&y, &model.inner, a, b, &partition).map_err(py_err)?,
    })
}

/// Reference value of the same integral by adaptive quadrature.
#[pyfunction]
#[pyo3(signature = (model, a, b, tol = 1e-10))]
fn reference_integral_process(
    model: PyRef<PyProcessModel>,
    a: f64,
    b: f64,
    tol: f64,
) -> PyResult<PyChaosVector> {
    let y = IntegrandFn::process(&model.inner);
    Ok(PyChaosVector {
        inner: reference_integral(&y, &model.inner, a, b, tol).map_err(py_err)?,
    })
}

/// Refinement study of the Riemann sums; returns the report as a
/// dict with `partitions`, `errors`, `dual_index`, and `slope`.
#[pyfunction]
fn convergence_report(
    py: Python<'_>,
    model: PyRef<PyProcessModel>,
    a: f64,
    b: f64,
    sizes: Vec<usize>,
    dual_index: u32,
) -> PyResult<Py<PyAny>> {
    let y = IntegrandFn::process(&model.inner);
    let report =
        convergence_study(&y, &model.inner, a, b, &sizes, dual_index).map_err(py_err)?;
    let value = serde_json::to_value(&report)
        .map_err(|e| PyRuntimeError::new_err(format!("report serialization: {e}")))?;
    json_to_py(py, &value)
}

/// Ito identity for `f(x) = x^degree` in the exact regime; returns
/// the report as a dict.
#[pyfunction]
fn ito_polynomial(
    py: Python<'_>,
    model: PyRef<PyProcessModel>,
    degree: u32,
    t0: f64,
    t: f64,
    steps: usize,
) -> PyResult<Py<PyAny>> {
    let report = ito::ito_polynomial(&model.inner, degree, t0, t, steps).map_err(py_err)?;
    report_to_py(py, &report)
}

/// Ito identity for the complex exponential in the Wick-exponential
/// regime; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (model, alpha, t0, t, steps, wick_order = ito::DEFAULT_WICK_ORDER, tol = 1e-6))]
#[allow(clippy::too_many_arguments)]
fn ito_exponential(
    py: Python<'_>,
    model: PyRef<PyProcessModel>,
    alpha: f64,
    t0: f64,
    t: f64,
    steps: usize,
    wick_order: u32,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    let report =
        ito::ito_exponential(&model.inner, alpha, t0, t, steps, wick_order, tol).map_err(py_err)?;
    report_to_py(py, &report)
}

/// Ito identity by pathwise Monte Carlo for `f` in {"x", "x2",
/// "cos"}; returns the report as a dict.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn ito_pathwise(
    py: Python<'_>,
    model: PyRef<PyProcessModel>,
    f: &str,
    t0: f64,
    t: f64,
    steps: usize,
    paths: u64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let func = match f {
        "x" => PathwiseFn::identity(),
        "x2" => PathwiseFn::square(),
        "cos" => PathwiseFn::cosine(),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown test function {other:?}; expected x, x2, or cos"
            )))
        }
    };
    let report =
        ito::ito_pathwise(&model.inner, &func, t0, t, steps, paths, seed).map_err(py_err)?;
    report_to_py(py, &report)
}

/// All multi-indices with order and length bounds, in canonical
/// order.
#[pyfunction]
fn enumerate_indices(max_order: u32, max_length: u32, cap: usize) -> PyResult<Vec<PyMultiIndex>> {
    Ok(wicknoise::multi_index::enumerate(max_order, max_length, cap)
        .map_err(py_err)?
        .into_iter()
        .map(|inner| PyMultiIndex { inner })
        .collect())
}

/// Chaos vector with a single unit coefficient at the given index.
#[pyfunction]
fn basis_vector(index: PyRef<PyMultiIndex>) -> PyResult<PyChaosVector> {
    let alpha = index.inner.clone();
    let truncation = Truncation::new(alpha.order(), alpha.max_position().max(1));
    Ok(PyChaosVector {
        inner: ChaosVector::from_terms(vec![(alpha, 1.0)], truncation).map_err(py_err)?,
    })
}

#[pymodule]
fn wicknoise_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMultiIndex>()?;
    m.add_class::<PyChaosVector>()?;
    m.add_class::<PySpectralDensity>()?;
    m.add_class::<PyProcessModel>()?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(wick_bound_constant, m)?)?;
    m.add_function(wrap_pyfunction!(fbm_variance_constant, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_process, m)?)?;
    m.add_function(wrap_pyfunction!(reference_integral_process, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_report, m)?)?;
    m.add_function(wrap_pyfunction!(ito_polynomial, m)?)?;
    m.add_function(wrap_pyfunction!(ito_exponential, m)?)?;
    m.add_function(wrap_pyfunction!(ito_pathwise, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_indices, m)?)?;
    m.add_function(wrap_pyfunction!(basis_vector, m)?)?;
    Ok(())
}
