//! Python bindings for `lpcp-core`.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lpcp_core as core;
use lpcp_core::harness::{EvalConfig, Method, MethodParams, ScoreMatrix, TestPerturbation};
use lpcp_core::{Level, Threshold};

fn to_py(e: core::Error) -> PyErr {
    match e {
        core::Error::Io(_) | core::Error::Csv(_) | core::Error::Parse(_) => {
            PyIOError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn level(x: f64) -> PyResult<Level> {
    Level::new(x).map_err(to_py)
}

fn params(epsilon: f64, rho: f64) -> PyResult<core::LpParams> {
    core::LpParams::new(epsilon, rho).map_err(to_py)
}

/// Sorted sample of finite nonconformity scores.
#[pyclass(name = "ScoreSample", frozen)]
struct PyScoreSample(core::ScoreSample);

#[pymethods]
impl PyScoreSample {
    #[new]
    fn new(scores: Vec<f64>) -> PyResult<Self> {
        core::ScoreSample::new(scores).map(Self).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("ScoreSample(n={})", self.0.len())
    }

    /// Scores in ascending order.
    #[getter]
    fn scores(&self) -> Vec<f64> {
        self.0.scores().to_vec()
    }

    /// The `ceil(beta n)`-th smallest score.
    fn quantile(&self, beta: f64) -> PyResult<f64> {
        self.0.quantile(level(beta)?).map_err(to_py)
    }

    /// Fraction of scores at or below `q`.
    fn cdf(&self, q: f64) -> f64 {
        self.0.cdf(q)
    }
}

/// Threshold with the level it was read at. An unbounded threshold is `inf`.
#[pyclass(name = "ThresholdResult", frozen, get_all)]
struct PyThresholdResult {
    threshold: f64,
    level_used: f64,
    offset: f64,
    coverage_bound: Option<f64>,
}

#[pymethods]
impl PyThresholdResult {
    #[getter]
    fn is_unbounded(&self) -> bool {
        self.threshold == f64::INFINITY
    }

    fn __repr__(&self) -> String {
        format!(
            "ThresholdResult(threshold={}, level_used={}, offset={}, coverage_bound={:?})",
            self.threshold, self.level_used, self.offset, self.coverage_bound
        )
    }
}

impl From<core::ThresholdResult> for PyThresholdResult {
    fn from(r: core::ThresholdResult) -> Self {
        Self {
            threshold: match r.threshold {
                Threshold::Finite(v) => v,
                Threshold::Unbounded => f64::INFINITY,
            },
            level_used: r.level_used,
            offset: r.offset,
            coverage_bound: r.coverage_bound,
        }
    }
}

fn threshold(r: core::Result<core::ThresholdResult>) -> PyResult<PyThresholdResult> {
    r.map(Into::into).map_err(to_py)
}

/// Optimal transport summary; `matched` lists `(source, target, units)`.
#[pyclass(name = "TransportResult", frozen, get_all)]
struct PyTransportResult {
    rho: f64,
    matched_units: u64,
    total_units: u64,
    matched: Vec<(usize, usize, u64)>,
}

#[pymethods]
impl PyTransportResult {
    fn __repr__(&self) -> String {
        format!("TransportResult(rho={})", self.rho)
    }
}

#[pyfunction]
fn lp_distance(
    p: &PyScoreSample,
    q: &PyScoreSample,
    epsilon: f64,
) -> PyResult<PyTransportResult> {
    let t = core::lp_distance(&p.0, &q.0, epsilon).map_err(to_py)?;
    Ok(PyTransportResult {
        rho: t.rho.value(),
        matched_units: t.matched_units,
        total_units: t.total_units,
        matched: t.matched.iter().map(|e| (e.source, e.target, e.units)).collect(),
    })
}

#[pyfunction]
fn conformal_quantile(sample: &PyScoreSample, alpha: f64) -> PyResult<PyThresholdResult> {
    threshold(core::conformal_quantile(&sample.0, level(alpha)?))
}

#[pyfunction]
fn worst_case_quantile(
    sample: &PyScoreSample,
    beta: f64,
    epsilon: f64,
    rho: f64,
) -> PyResult<PyThresholdResult> {
    threshold(core::worst_case_quantile(&sample.0, level(beta)?, params(epsilon, rho)?))
}

#[pyfunction]
fn worst_case_coverage(sample: &PyScoreSample, q: f64, epsilon: f64, rho: f64) -> PyResult<f64> {
    core::worst_case_coverage(&sample.0, q, params(epsilon, rho)?)
        .map(Level::value)
        .map_err(to_py)
}

#[pyfunction]
fn robust_threshold(
    sample: &PyScoreSample,
    alpha: f64,
    epsilon: f64,
    rho: f64,
) -> PyResult<PyThresholdResult> {
    threshold(core::robust_threshold(&sample.0, level(alpha)?, params(epsilon, rho)?))
}

#[pyfunction]
fn coverage_lower_bound(n: usize, alpha: f64, rho: f64) -> PyResult<f64> {
    core::coverage_lower_bound(n, level(alpha)?, level(rho)?)
        .map(Level::value)
        .map_err(to_py)
}

#[pyfunction]
fn adjusted_beta(n: usize, alpha: f64, rho: f64) -> PyResult<f64> {
    core::adjusted_beta(n, level(alpha)?, level(rho)?)
        .map(Level::value)
        .map_err(to_py)
}

#[pyfunction]
fn tv_threshold(sample: &PyScoreSample, alpha: f64, rho: f64) -> PyResult<PyThresholdResult> {
    threshold(core::tv_threshold(&sample.0, level(alpha)?, level(rho)?))
}

#[pyfunction]
fn winf_threshold(sample: &PyScoreSample, alpha: f64, epsilon: f64) -> PyResult<PyThresholdResult> {
    threshold(core::winf_threshold(&sample.0, level(alpha)?, epsilon))
}

#[pyfunction]
fn sc_threshold(sample: &PyScoreSample, alpha: f64) -> PyResult<PyThresholdResult> {
    threshold(core::sc_threshold(&sample.0, level(alpha)?))
}

#[pyfunction]
fn chi2_g(beta: f64, rho: f64) -> PyResult<f64> {
    core::chi2_g(level(beta)?, rho).map(Level::value).map_err(to_py)
}

#[pyfunction]
fn chi2_g_inv(tau: f64, rho: f64) -> PyResult<f64> {
    core::chi2_g_inv(level(tau)?, rho).map(Level::value).map_err(to_py)
}

#[pyfunction]
fn chi2_threshold(sample: &PyScoreSample, alpha: f64, rho: f64) -> PyResult<PyThresholdResult> {
    threshold(core::chi2_threshold(&sample.0, level(alpha)?, rho))
}

#[pyfunction]
fn weighted_threshold(
    scores: Vec<f64>,
    weights: Vec<f64>,
    test_weight: f64,
    alpha: f64,
) -> PyResult<PyThresholdResult> {
    let ws = core::WeightedScores::new(scores, weights, test_weight).map_err(to_py)?;
    threshold(core::weighted_threshold(&ws, level(alpha)?))
}

#[pyfunction]
fn fg_threshold(
    scores: Vec<f64>,
    weights: Vec<f64>,
    test_weight: f64,
    alpha: f64,
    rho: f64,
) -> PyResult<PyThresholdResult> {
    let ws = core::WeightedScores::new(scores, weights, test_weight).map_err(to_py)?;
    threshold(core::fg_threshold(&ws, level(alpha)?, rho))
}

#[pyfunction]
fn rscp_threshold(
    sample: &PyScoreSample,
    alpha: f64,
    delta: f64,
    sigma: f64,
) -> PyResult<PyThresholdResult> {
    threshold(core::rscp_threshold(&sample.0, level(alpha)?, delta, sigma))
}

/// Returns `{"epsilon", "rho", "beta", "q", "grid_trace"}`.
#[pyfunction]
fn estimate_lp_params<'py>(
    py: Python<'py>,
    calib_a: &PyScoreSample,
    calib_b: &PyScoreSample,
    test: &PyScoreSample,
    epsilon_grid: Vec<f64>,
    alpha: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let est = core::estimate_lp_params(&calib_a.0, &calib_b.0, &test.0, &epsilon_grid, level(alpha)?)
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("epsilon", est.epsilon)?;
    out.set_item("rho", est.rho)?;
    out.set_item("beta", est.beta)?;
    out.set_item("q", est.q)?;
    let trace: Vec<(f64, f64, Option<f64>)> =
        est.grid_trace.iter().map(|r| (r.epsilon, r.rho, r.q)).collect();
    out.set_item("grid_trace", trace)?;
    Ok(out)
}

/// Replaces each score by a point mass at `global_value` with probability
/// `rho`, otherwise displaces it uniformly within `epsilon`.
#[pyfunction]
#[pyo3(signature = (sample, epsilon, rho, global_value, seed=0))]
fn perturb_sample(
    sample: &PyScoreSample,
    epsilon: f64,
    rho: f64,
    global_value: f64,
    seed: u64,
) -> PyResult<PyScoreSample> {
    let spec = core::PerturbationSpec::new(epsilon, rho, global_value, seed).map_err(to_py)?;
    core::perturb_sample(&sample.0, &spec)
        .map(PyScoreSample)
        .map_err(to_py)
}

/// Runs repeated calibration/test splits and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (
    scores, true_labels, method="lp", alpha=0.1, splits=10, n_calib=1000, k_test=1000, seed=0,
    epsilon=0.0, rho=0.0, rho_chi2=0.0, delta=0.0, sigma=1.0, corrected=true,
    perturb_epsilon=None, perturb_rho=None, weights=None,
))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    scores: Vec<Vec<f64>>,
    true_labels: Vec<usize>,
    method: &str,
    alpha: f64,
    splits: usize,
    n_calib: usize,
    k_test: usize,
    seed: u64,
    epsilon: f64,
    rho: f64,
    rho_chi2: f64,
    delta: f64,
    sigma: f64,
    corrected: bool,
    perturb_epsilon: Option<f64>,
    perturb_rho: Option<f64>,
    weights: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let labels = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != labels) {
        return Err(PyValueError::new_err("score rows must all have the same length"));
    }
    let matrix = ScoreMatrix::new(labels, scores.concat(), true_labels).map_err(to_py)?;
    let method_params = MethodParams {
        epsilon,
        rho,
        rho_chi2,
        delta,
        sigma,
        corrected,
    };
    let method = Method::from_name(method, &method_params).map_err(to_py)?;
    let perturbation = (perturb_epsilon.is_some() || perturb_rho.is_some()).then(|| TestPerturbation {
        epsilon: perturb_epsilon.unwrap_or(0.0),
        rho: perturb_rho.unwrap_or(0.0),
        redraw: true,
    });
    let config = EvalConfig {
        alpha,
        splits,
        n_calib,
        k_test,
        seed,
        perturbation,
    };
    let report = py
        .detach(|| core::harness::evaluate(&matrix, &method, &config, weights.as_deref()))
        .map_err(to_py)?;
    let text = report.to_json().map_err(to_py)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pymodule]
fn lpcp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScoreSample>()?;
    m.add_class::<PyThresholdResult>()?;
    m.add_class::<PyTransportResult>()?;
    m.add_function(wrap_pyfunction!(lp_distance, m)?)?;
    m.add_function(wrap_pyfunction!(conformal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(robust_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_beta, m)?)?;
    m.add_function(wrap_pyfunction!(tv_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(winf_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(sc_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_g, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_g_inv, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(fg_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(rscp_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_lp_params, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_sample, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
