//! Python bindings for the rule miner.
//!
//! Structured results (rules, metrics, manifests) cross the boundary as
//! JSON and come back as plain dicts and lists.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rule_miner::attention::{self, Similarity, TimestampEncoding};
use rule_miner::data;
use rule_miner::eval;
use rule_miner::mining::mine;
use rule_miner::model::Model;
use rule_miner::pipeline::{self, Prepared, RunConfig};
use rule_miner::rules;
use rule_miner::training::{self, Moments};
use rule_miner::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Dense row-major matrix of floats.
#[pyclass(name = "Tensor", module = "rule_miner", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: rule_miner::tensor::Tensor,
}

impl From<rule_miner::tensor::Tensor> for PyTensor {
    fn from(inner: rule_miner::tensor::Tensor) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(rule_miner::tensor::Tensor::from_rows(&rows).map_err(py_err)?.into())
    }

    #[staticmethod]
    fn zeros(rows: usize, cols: usize) -> Self {
        rule_miner::tensor::Tensor::zeros(rows, cols).into()
    }

    #[staticmethod]
    #[pyo3(signature = (rows, cols, seed, std = 1.0))]
    fn randn(rows: usize, cols: usize, seed: u64, std: f64) -> Self {
        let mut rng = rule_miner::tensor::Rng::new(seed);
        rule_miner::tensor::Tensor::randn(rows, cols, std, &mut rng).into()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.rows(), self.inner.cols())
    }

    fn tolist(&self) -> Vec<Vec<f64>> {
        self.inner.to_rows()
    }

    fn matmul(&self, other: PyRef<'_, PyTensor>) -> PyResult<Self> {
        Ok(self.inner.matmul(&other.inner).map_err(py_err)?.into())
    }

    fn __matmul__(&self, other: PyRef<'_, PyTensor>) -> PyResult<Self> {
        self.matmul(other)
    }

    fn transpose(&self) -> Self {
        self.inner.transpose().into()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

fn similarity(name: &str) -> PyResult<Similarity> {
    match name {
        "cosine" => Ok(Similarity::Cosine),
        "dot" => Ok(Similarity::Dot),
        other => Err(PyValueError::new_err(format!("unknown similarity {other:?}; use \"cosine\" or \"dot\""))),
    }
}

/// Softmax attention; returns `(output, weights)`.
#[pyfunction]
fn scaled_dot_attention(q: PyRef<'_, PyTensor>, k: PyRef<'_, PyTensor>, v: PyRef<'_, PyTensor>) -> PyResult<(PyTensor, PyTensor)> {
    let (o, w) = attention::scaled_dot_attention_values(&q.inner, &k.inner, &v.inner).map_err(py_err)?;
    Ok((o.into(), w.into()))
}

/// Attention with sinusoidal timestamps added to queries and keys.
/// `null=True` uses the all-zero encoding.
#[pyfunction]
#[pyo3(signature = (q, k, v, timestamps, base = 10000.0, null = false))]
fn timestamp_attention(
    q: PyRef<'_, PyTensor>,
    k: PyRef<'_, PyTensor>,
    v: PyRef<'_, PyTensor>,
    timestamps: Vec<f64>,
    base: f64,
    null: bool,
) -> PyResult<(PyTensor, PyTensor)> {
    let d = q.inner.cols();
    let enc = if null { TimestampEncoding::null(d) } else { TimestampEncoding::new(d, base) };
    let (o, w) = attention::timestamp_attention_values(&q.inner, &k.inner, &v.inner, &timestamps, &enc).map_err(py_err)?;
    Ok((o.into(), w.into()))
}

/// Column-stochastic step weights from pairwise similarity of rows.
#[pyfunction]
#[pyo3(signature = (x, similarity = "cosine"))]
fn temporal_step_weights(x: PyRef<'_, PyTensor>, similarity: &str) -> PyResult<PyTensor> {
    let sim = self::similarity(similarity)?;
    Ok(attention::temporal_step_weights_values(&x.inner, sim).map_err(py_err)?.into())
}

#[pyfunction]
fn step_transition_matrix(states: PyRef<'_, PyTensor>) -> PyResult<PyTensor> {
    Ok(rules::step_transition_matrix(&states.inner).map_err(py_err)?.into())
}

/// Soft assignment of a rule state to the codebook; returns `(code, probabilities)`.
#[pyfunction]
#[pyo3(signature = (state, codebook, tau = 1.0))]
fn assign_code(state: Vec<f64>, codebook: PyRef<'_, PyTensor>, tau: f64) -> PyResult<(usize, Vec<f64>)> {
    let a = rules::assign_code(&state, &codebook.inner, tau).map_err(py_err)?;
    Ok((a.code, a.probabilities))
}

#[pyfunction]
fn distribution_divergence(hist_mean: Vec<f64>, hist_var: Vec<f64>, cur_mean: Vec<f64>, cur_var: Vec<f64>) -> PyResult<f64> {
    let hist = Moments {
        mean: hist_mean,
        var: hist_var,
    };
    let cur = Moments {
        mean: cur_mean,
        var: cur_var,
    };
    training::distribution_divergence(&hist, &cur).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (base, drift, kappa = 1.0))]
fn adaptive_learning_rate(base: f64, drift: f64, kappa: f64) -> f64 {
    training::adaptive_learning_rate(base, drift, kappa)
}

/// Frequent itemsets with their absolute counts, shortest first.
#[pyfunction]
#[pyo3(signature = (transactions, min_support, max_len = None))]
fn frequent_itemsets(transactions: Vec<Vec<i64>>, min_support: f64, max_len: Option<usize>) -> PyResult<Vec<(Vec<i64>, usize)>> {
    let tx: Vec<BTreeSet<i64>> = transactions.into_iter().map(|t| t.into_iter().collect()).collect();
    eval::frequent_itemsets(&tx, min_support, max_len).map_err(py_err)
}

/// Reads a whitespace-separated turbofan file. Each unit dict carries its
/// records and the per-cycle remaining useful life.
#[pyfunction]
fn parse_cmapss<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Vec<Bound<'py, PyAny>>> {
    let units = data::parse_cmapss(&path).map_err(py_err)?;
    units
        .iter()
        .map(|u| {
            let d = to_py(py, u)?;
            d.set_item("rul", u.rul())?;
            Ok(d)
        })
        .collect()
}

/// Writes a planted dataset to `out`; returns its manifest.
#[pyfunction]
#[pyo3(signature = (out, config_json = None))]
fn write_synth<'py>(py: Python<'py>, out: PathBuf, config_json: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: data::SynthConfig = match config_json {
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => data::SynthConfig::default(),
    };
    let d = data::generate(&cfg).map_err(py_err)?;
    data::write_synth(&out, &d).map_err(py_err)?;
    to_py(py, &d.manifest)
}

/// Loads data for a run configuration, then trains, mines and evaluates.
#[pyclass(name = "Pipeline", module = "rule_miner")]
pub struct PyPipeline {
    cfg: RunConfig,
    data: Prepared,
    model: Option<Model>,
}

impl PyPipeline {
    fn model(&self) -> PyResult<&Model> {
        self.model
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("call train() first"))
    }
}

#[pymethods]
impl PyPipeline {
    #[new]
    #[pyo3(signature = (config_json = "{}"))]
    fn new(config_json: &str) -> PyResult<Self> {
        let cfg = RunConfig::from_json(config_json).map_err(py_err)?;
        let data = pipeline::prepare(&cfg, &pipeline::load_dataset(&cfg).map_err(py_err)?).map_err(py_err)?;
        Ok(Self { cfg, data, model: None })
    }

    #[getter]
    fn train_windows(&self) -> usize {
        self.data.train.len()
    }

    #[getter]
    fn eval_windows(&self) -> usize {
        self.data.eval.len()
    }

    /// Trains from a fresh initialization; returns the per-step log.
    fn train<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let (model, log) = pipeline::train_model(&self.cfg, &self.data).map_err(py_err)?;
        self.model = Some(model);
        to_py(py, &log)
    }

    /// Rules mined from the training split.
    fn mine<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let mined = mine(self.model()?, &self.data.train, self.data.pre.bands.count(), &self.cfg.mining).map_err(py_err)?;
        to_py(py, &mined.rules)
    }

    /// Held-out metrics of the mined rules.
    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let (_, report) = pipeline::evaluate_model(&self.cfg, self.model()?, &self.data).map_err(py_err)?;
        to_py(py, &report)
    }

    fn checkpoint_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.model()?.checkpoint()).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

#[pymodule]
#[pyo3(name = "rule_miner")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(scaled_dot_attention, m)?)?;
    m.add_function(wrap_pyfunction!(timestamp_attention, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_step_weights, m)?)?;
    m.add_function(wrap_pyfunction!(step_transition_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(assign_code, m)?)?;
    m.add_function(wrap_pyfunction!(distribution_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_learning_rate, m)?)?;
    m.add_function(wrap_pyfunction!(frequent_itemsets, m)?)?;
    m.add_function(wrap_pyfunction!(parse_cmapss, m)?)?;
    m.add_function(wrap_pyfunction!(write_synth, m)?)?;
    Ok(())
}
