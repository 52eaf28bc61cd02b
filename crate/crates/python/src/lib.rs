//! Python bindings. Matrices cross the boundary as lists of rows; structured
//! reports come back as plain dicts.

use fragility_core::attribution::{linear_shap as core_linear_shap, taylor_attribution};
use fragility_core::audit::{self, AuditConfig};
use fragility_core::fragility::{self as frag, DEFAULT_EPSILON};
use fragility_core::models::{self, TrainConfig};
use fragility_core::sharp::{self, SharpConfig, SharpModel};
use fragility_core::theorem::{self, NonIdentifiabilitySpec, SyntheticSpec, DEFAULT_RHO_GRID};
use fragility_core::{caa, data, Aggregation, AttributionMatrix, BootstrapPlan, DatasetSchema, Error, OutputScale};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else if matches!(e, Error::Io { .. }) {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn dmatrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Numeric design matrix with named columns.
#[pyclass(name = "FeatureMatrix", module = "fragility", frozen)]
struct PyFeatureMatrix(data::FeatureMatrix);

#[pymethods]
impl PyFeatureMatrix {
    #[new]
    #[pyo3(signature = (rows, names=None))]
    fn new(rows: Vec<Vec<f64>>, names: Option<Vec<String>>) -> PyResult<Self> {
        let m = dmatrix(&rows)?;
        let x = match names {
            Some(n) => data::FeatureMatrix::new(m, n),
            None => data::FeatureMatrix::unnamed(m),
        };
        x.map(Self).map_err(err)
    }

    /// Returns `(matrix, labels)`.
    #[staticmethod]
    #[pyo3(signature = (path, label="label"))]
    fn from_csv(path: &str, label: &str) -> PyResult<(Self, Vec<u8>)> {
        let schema = if label == "unsw-nb15" { DatasetSchema::unsw_nb15() } else { DatasetSchema::with_label(label) };
        let (x, y) = data::load_csv(path, &schema).map_err(err)?;
        Ok((Self(x), y.values().to_vec()))
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.nrows(), self.0.ncols())
    }

    #[getter]
    fn column_names(&self) -> Vec<String> {
        self.0.column_names().to_vec()
    }

    fn standardize(&self) -> PyResult<Self> {
        self.0.standardize().map(Self).map_err(err)
    }

    fn standardize_like(&self, reference: &Self) -> PyResult<Self> {
        self.0.standardize_like(&reference.0).map(Self).map_err(err)
    }

    fn to_rows(&self) -> Vec<Vec<f64>> {
        to_rows(self.0.values())
    }

    fn __repr__(&self) -> String {
        format!("FeatureMatrix({}x{})", self.0.nrows(), self.0.ncols())
    }
}

/// Fitted OLS, logistic or MLP parameters.
#[pyclass(name = "Model", module = "fragility", frozen)]
struct PyModel(models::ModelParams);

#[pymethods]
impl PyModel {
    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.0.kind).to_lowercase()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights.clone()
    }

    fn predict_proba(&self, x: &PyFeatureMatrix) -> PyResult<Vec<f64>> {
        models::predict_proba(&self.0, &x.0).map_err(err)
    }

    fn evaluate(&self, py: Python<'_>, x: &PyFeatureMatrix, y: Vec<u8>) -> PyResult<Py<PyAny>> {
        let y = data::LabelVector::new(y).map_err(err)?;
        to_py(py, &models::evaluate(&self.0, &x.0, &y).map_err(err)?)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        models::ModelParams::from_json(text).map(Self).map_err(err)
    }
}

fn train_config(lr: f64, epochs: usize, batch_size: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        epochs,
        batch_size,
        seed,
        ..TrainConfig::default()
    }
}

fn labels(y: Vec<u8>) -> PyResult<data::LabelVector> {
    data::LabelVector::new(y).map_err(err)
}

/// Per-feature VIF; `None` for constant columns, `inf` for exact collinearity.
#[pyfunction]
fn vif(x: &PyFeatureMatrix) -> PyResult<Vec<Option<f64>>> {
    Ok(audit::vif(&x.0).map_err(err)?.entries.into_iter().map(|e| e.vif).collect())
}

#[pyfunction]
#[pyo3(signature = (x, vif_thresh=audit::SEVERE_VIF, rho_thresh=audit::DEFAULT_RHO_THRESH, seed=0))]
fn audit_features(py: Python<'_>, x: &PyFeatureMatrix, vif_thresh: f64, rho_thresh: f64, seed: u64) -> PyResult<Py<PyAny>> {
    let cfg = AuditConfig {
        vif_thresh,
        rho_thresh,
        seed,
        ..AuditConfig::default()
    };
    to_py(py, &audit::audit(&x.0, &cfg).map_err(err)?)
}

#[pyfunction]
fn fit_ols(x: &PyFeatureMatrix, y: Vec<f64>) -> PyResult<PyModel> {
    models::fit_ols(&x.0, &y).map(PyModel).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, y, learning_rate=0.1, epochs=10, batch_size=64, seed=0))]
fn fit_logistic(x: &PyFeatureMatrix, y: Vec<u8>, learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> PyResult<PyModel> {
    let cfg = train_config(learning_rate, epochs, batch_size, seed);
    models::fit_logistic(&x.0, &labels(y)?, &cfg).map(PyModel).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, y, hidden, learning_rate=0.1, epochs=10, batch_size=64, seed=0))]
fn fit_mlp(
    x: &PyFeatureMatrix,
    y: Vec<u8>,
    hidden: Vec<usize>,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let cfg = train_config(learning_rate, epochs, batch_size, seed);
    models::fit_mlp(&x.0, &labels(y)?, &cfg, &hidden).map(PyModel).map_err(err)
}

/// Exact SHAP for linear and logistic models (logit scale).
#[pyfunction]
fn linear_shap(model: &PyModel, x: &PyFeatureMatrix, baseline: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&core_linear_shap(&model.0, &x.0, &baseline).map_err(err)?.values))
}

#[pyfunction]
#[pyo3(signature = (model, x, baseline, probability=false))]
fn taylor(model: &PyModel, x: &PyFeatureMatrix, baseline: Vec<f64>, probability: bool) -> PyResult<Vec<Vec<f64>>> {
    let scale = if probability { OutputScale::Probability } else { OutputScale::Raw };
    Ok(to_rows(&taylor_attribution(&model.0, &x.0, &baseline, scale).map_err(err)?.values))
}

fn attribution_samples(samples: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<AttributionMatrix>> {
    samples
        .iter()
        .map(|s| {
            let values = dmatrix(s)?;
            let p = values.ncols();
            Ok(AttributionMatrix {
                values,
                baseline: vec![0.0; p],
                method: fragility_core::attribution::MethodTag::LinearExact,
                model_ref: String::new(),
                feature_names: (0..p).map(|j| format!("x{j}")).collect(),
            })
        })
        .collect()
}

/// Fragility scores from `B` attribution matrices of equal shape.
#[pyfunction]
#[pyo3(signature = (samples, epsilon=DEFAULT_EPSILON))]
fn fragility_scores(samples: Vec<Vec<Vec<f64>>>, epsilon: f64) -> PyResult<Vec<f64>> {
    let samples = attribution_samples(samples)?;
    Ok(frag::fragility_scores(&samples, epsilon).map_err(err)?.scores())
}

/// Bootstrap the model `kind` (`ols`, `logistic`, `mlp`) and return a fragility report.
#[pyfunction]
#[pyo3(signature = (train_x, train_y, eval_x, kind="logistic", resamples=10, sample_size=None, seed=0, epochs=10, hidden=vec![16]))]
#[allow(clippy::too_many_arguments)]
fn bootstrap_fragility(
    py: Python<'_>,
    train_x: &PyFeatureMatrix,
    train_y: Vec<f64>,
    eval_x: &PyFeatureMatrix,
    kind: &str,
    resamples: usize,
    sample_size: Option<usize>,
    seed: u64,
    epochs: usize,
    hidden: Vec<usize>,
) -> PyResult<Py<PyAny>> {
    let config = train_config(0.1, epochs, 64, seed);
    let spec = match kind {
        "ols" => models::ModelSpec::Ols,
        "logistic" => models::ModelSpec::Logistic { config },
        "mlp" => models::ModelSpec::Mlp { config, hidden },
        other => return Err(PyValueError::new_err(format!("unknown model kind {other:?}"))),
    };
    let plan = BootstrapPlan::new(resamples, sample_size.unwrap_or(train_x.0.nrows().min(10_000)), seed).map_err(err)?;
    let method = fragility_core::AttributionMethod::default_for(spec.kind());
    let samples = frag::bootstrap_attributions(&train_x.0, &train_y, &eval_x.0, &spec, &plan, &method).map_err(err)?;
    let report = frag::fragility_scores(&samples, DEFAULT_EPSILON).map_err(err)?.with_plan(plan);
    to_py(py, &report)
}

/// Kendall tau-a between two rankings (lists of feature indices, best first).
#[pyfunction]
fn kendall_tau(rank_a: Vec<usize>, rank_b: Vec<usize>) -> PyResult<f64> {
    frag::kendall_tau(&rank_a, &rank_b).map_err(err)
}

#[pyfunction]
fn rank_by_importance(scores: Vec<f64>) -> Vec<usize> {
    frag::rank_by_importance(&scores)
}

/// Returns `(cluster_attributions, cluster_names)`.
#[pyfunction]
#[pyo3(signature = (attributions, x, rho_thresh=audit::DEFAULT_RHO_THRESH, aggregation="mean"))]
fn caa_filter(
    attributions: Vec<Vec<f64>>,
    x: &PyFeatureMatrix,
    rho_thresh: f64,
    aggregation: &str,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<String>>)> {
    let agg: Aggregation = aggregation.parse().map_err(err)?;
    let mut s = attribution_samples(vec![attributions])?.remove(0);
    s.feature_names = x.0.column_names().to_vec();
    let (filtered, mapping) = caa::caa_filter(&s, &x.0, rho_thresh, agg).map_err(err)?;
    Ok((to_rows(&filtered.values), mapping.names))
}

/// Train with the fragility penalty. Returns `(model, penalty_per_step)`.
#[pyfunction]
#[pyo3(signature = (x, y, lam=0.5, k_interval=1, hidden=None, learning_rate=0.1, epochs=10, batch_size=64, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_sharp(
    x: &PyFeatureMatrix,
    y: Vec<u8>,
    lam: f64,
    k_interval: usize,
    hidden: Option<Vec<usize>>,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> PyResult<(PyModel, Vec<f64>)> {
    let cfg = SharpConfig {
        lambda: lam,
        fragility_interval: k_interval,
        base: train_config(learning_rate, epochs, batch_size, seed),
        ..SharpConfig::default()
    };
    let model = match hidden {
        Some(hidden) => SharpModel::Mlp { hidden },
        None => SharpModel::Logistic,
    };
    let (m, trace) = sharp::train_sharp(&x.0, &labels(y)?, &model, &cfg).map_err(err)?;
    Ok((PyModel(m), trace.penalties.iter().map(|s| s.penalty).collect()))
}

/// Synthetic design with one correlated pair (0, 1). Returns `(matrix, y)`.
#[pyfunction]
#[pyo3(signature = (n, p, rho, sigma=1.0, seed=0))]
fn synthetic(n: usize, p: usize, rho: f64, sigma: f64, seed: u64) -> PyResult<(PyFeatureMatrix, Vec<f64>)> {
    let spec = SyntheticSpec::independent(n, p, sigma, seed).with_pair(0, 1, rho);
    let (x, y) = theorem::generate_synthetic(&spec).map_err(err)?;
    Ok((PyFeatureMatrix(x), y))
}

/// OLS variance identity, VIF bound sweep and non-identifiability check.
#[pyfunction]
#[pyo3(signature = (n=10_000, p=4, resamples=200, sigma=1.0, seed=0, grid=None))]
fn theorem_check(
    py: Python<'_>,
    n: usize,
    p: usize,
    resamples: usize,
    sigma: f64,
    seed: u64,
    grid: Option<Vec<f64>>,
) -> PyResult<Py<PyAny>> {
    let grid = grid.unwrap_or_else(|| DEFAULT_RHO_GRID.to_vec());
    let template = SyntheticSpec::independent(n, p, sigma, seed);
    let (x, _) = theorem::generate_synthetic(&template.clone().with_pair(0, 1, 0.9)).map_err(err)?;
    let identity = theorem::ols_variance_identity_check(&x.standardize().map_err(err)?, sigma).map_err(err)?;
    let plan = BootstrapPlan::new(resamples, n, seed).map_err(err)?;
    let bound = theorem::variance_bound_experiment(&grid, &template, &plan).map_err(err)?;
    let non_id = theorem::non_identifiability_check(&NonIdentifiabilitySpec {
        seed,
        ..NonIdentifiabilitySpec::default()
    })
    .map_err(err)?;
    let passed = identity.passed && bound.passed && non_id.passed;
    to_py(
        py,
        &serde_json::json!({
            "identity": identity,
            "bound": bound,
            "non_identifiability": non_id,
            "passed": passed,
        }),
    )
}

#[pymodule]
fn fragility(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyFeatureMatrix>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(vif, m)?)?;
    m.add_function(wrap_pyfunction!(audit_features, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ols, m)?)?;
    m.add_function(wrap_pyfunction!(fit_logistic, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mlp, m)?)?;
    m.add_function(wrap_pyfunction!(linear_shap, m)?)?;
    m.add_function(wrap_pyfunction!(taylor, m)?)?;
    m.add_function(wrap_pyfunction!(fragility_scores, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_fragility, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(rank_by_importance, m)?)?;
    m.add_function(wrap_pyfunction!(caa_filter, m)?)?;
    m.add_function(wrap_pyfunction!(train_sharp, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(theorem_check, m)?)?;
    Ok(())
}
