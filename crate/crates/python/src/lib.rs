//! Python bindings for `dualsteer`.
//!
//! Labels cross the boundary as the strings `"Left"`, `"Center"`, `"Right"`;
//! structured reports come back as plain dicts.

use dualsteer::data::{self, DatasetMeta, SynthConfig};
use dualsteer::geometry::{self, center_band_stats, ordering_score, pca_top_k};
use dualsteer::{metrics, trainer, HiddenVector, Label, LogitTriple, Optimizer};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

fn to_py_err(e: dualsteer::Error) -> PyErr {
    match e {
        dualsteer::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for dualsteer::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

/// Round-trips a serializable value through `json.loads`.
fn to_pyobject<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_label(s: &str) -> PyResult<Label> {
    s.parse().map_err(|e: dualsteer::types::ParseLabelError| PyValueError::new_err(e.to_string()))
}

fn triple(z: [f64; 3]) -> PyResult<LogitTriple> {
    LogitTriple::from_array(z).py_err()
}

#[pyclass(name = "Sample", module = "dualsteer", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PySample {
    inner: dualsteer::Sample,
}

#[pymethods]
impl PySample {
    #[new]
    fn new(id: String, facet: String, h: Vec<f64>, z: [f64; 3], label: &str) -> PyResult<Self> {
        let h = HiddenVector::new(h).py_err()?;
        let inner = dualsteer::Sample::new(id, facet, h, triple(z)?, parse_label(label)?).py_err()?;
        Ok(PySample { inner })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn facet(&self) -> &str {
        &self.inner.facet
    }

    #[getter]
    fn label(&self) -> &'static str {
        self.inner.y.as_str()
    }

    #[getter]
    fn h(&self) -> Vec<f64> {
        self.inner.h.as_slice().to_vec()
    }

    #[getter]
    fn z(&self) -> [f64; 3] {
        self.inner.z.as_array()
    }

    fn __repr__(&self) -> String {
        format!(
            "Sample(id={:?}, facet={:?}, label={:?}, d={})",
            self.inner.id,
            self.inner.facet,
            self.inner.y.as_str(),
            self.inner.h.dim()
        )
    }
}

#[pyclass(name = "SteeringParams", module = "dualsteer", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PySteeringParams {
    inner: dualsteer::SteeringParams,
}

#[pymethods]
impl PySteeringParams {
    #[new]
    fn new(v_s: Vec<f64>, b_s: f64, v_g: Vec<f64>, b_g: f64, mu_raw: f64) -> PyResult<Self> {
        let inner = dualsteer::SteeringParams::new(v_s, b_s, v_g, b_g, mu_raw).py_err()?;
        Ok(PySteeringParams { inner })
    }

    #[staticmethod]
    fn zeros(d: usize) -> Self {
        PySteeringParams {
            inner: dualsteer::SteeringParams::zeros(d),
        }
    }

    #[staticmethod]
    fn from_flat(d: usize, flat: Vec<f64>) -> PyResult<Self> {
        let inner = dualsteer::SteeringParams::from_flat(d, &flat).py_err()?;
        Ok(PySteeringParams { inner })
    }

    fn to_flat(&self) -> Vec<f64> {
        self.inner.to_flat()
    }

    #[getter]
    fn v_s(&self) -> Vec<f64> {
        self.inner.v_s.clone()
    }

    #[getter]
    fn b_s(&self) -> f64 {
        self.inner.b_s
    }

    #[getter]
    fn v_g(&self) -> Vec<f64> {
        self.inner.v_g.clone()
    }

    #[getter]
    fn b_g(&self) -> f64 {
        self.inner.b_g
    }

    #[getter]
    fn mu_raw(&self) -> f64 {
        self.inner.mu_raw
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!(
            "SteeringParams(d={}, b_s={}, b_g={}, mu={})",
            self.inner.dim(),
            self.inner.b_s,
            self.inner.b_g,
            self.inner.mu()
        )
    }
}

#[pyclass(name = "TrainConfig", module = "dualsteer", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
pub struct PyTrainConfig {
    learning_rate: f64,
    epochs: usize,
    seed: u64,
    l2_penalty: f64,
    init_scale: f64,
    /// `"adam"` or `"gd"`.
    optimizer: String,
    early_stop_patience: Option<usize>,
}

impl PyTrainConfig {
    fn to_core(&self) -> PyResult<dualsteer::TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "adam" => Optimizer::default(),
            "gd" => Optimizer::GradientDescent,
            other => return Err(PyValueError::new_err(format!("unknown optimizer {other:?}; use \"adam\" or \"gd\""))),
        };
        let config = dualsteer::TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed: self.seed,
            l2_penalty: self.l2_penalty,
            init_scale: self.init_scale,
            optimizer,
            early_stop_patience: self.early_stop_patience,
        };
        config.validate().py_err()?;
        Ok(config)
    }
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (learning_rate=0.05, epochs=500, seed=0, l2_penalty=1e-4, init_scale=0.0, optimizer="adam".to_string(), early_stop_patience=None))]
    fn new(
        learning_rate: f64,
        epochs: usize,
        seed: u64,
        l2_penalty: f64,
        init_scale: f64,
        optimizer: String,
        early_stop_patience: Option<usize>,
    ) -> PyResult<Self> {
        let config = PyTrainConfig {
            learning_rate,
            epochs,
            seed,
            l2_penalty,
            init_scale,
            optimizer,
            early_stop_patience,
        };
        config.to_core()?;
        Ok(config)
    }
}

#[pyclass(name = "TrainResult", module = "dualsteer", frozen, get_all)]
pub struct PyTrainResult {
    params: Py<PySteeringParams>,
    initial_loss: f64,
    final_loss: f64,
    loss_history: Vec<f64>,
    epochs_run: usize,
}

fn unwrap_samples(samples: &[PyRef<'_, PySample>]) -> Vec<dualsteer::Sample> {
    samples.iter().map(|s| s.inner.clone()).collect()
}

fn wrap_samples(samples: Vec<dualsteer::Sample>) -> Vec<PySample> {
    samples.into_iter().map(|inner| PySample { inner }).collect()
}

#[pyfunction]
fn softplus(x: f64) -> f64 {
    dualsteer::softplus(x)
}

#[pyfunction]
fn softmax(z: [f64; 3]) -> PyResult<[f64; 3]> {
    Ok(dualsteer::softmax(&triple(z)?))
}

#[pyfunction]
fn argmax_label(z: [f64; 3]) -> PyResult<&'static str> {
    Ok(dualsteer::argmax_label(&triple(z)?).as_str())
}

/// Applies the steering update to base logits `z`.
#[pyfunction]
fn calibrate(z: [f64; 3], s: f64, g: f64, mu: f64) -> PyResult<[f64; 3]> {
    Ok(dualsteer::calibrate(&triple(z)?, s, g, mu).py_err()?.as_array())
}

/// Returns `{"s", "g", "calibrated", "probs", "label"}`.
#[pyfunction]
fn predict<'py>(
    py: Python<'py>,
    params: PyRef<'_, PySteeringParams>,
    sample: PyRef<'_, PySample>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = dualsteer::predict(&params.inner, &sample.inner).py_err()?;
    let out = PyDict::new(py);
    out.set_item("s", p.probe.s)?;
    out.set_item("g", p.probe.g)?;
    out.set_item("calibrated", p.calibrated.as_array())?;
    out.set_item("probs", p.probs)?;
    out.set_item("label", p.label.as_str())?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (params, samples, l2_penalty=0.0))]
fn loss(params: PyRef<'_, PySteeringParams>, samples: Vec<PyRef<'_, PySample>>, l2_penalty: f64) -> PyResult<f64> {
    trainer::loss(&params.inner, &unwrap_samples(&samples), l2_penalty).py_err()
}

/// Analytic gradient, in the same layout as `SteeringParams`.
#[pyfunction]
#[pyo3(signature = (params, samples, l2_penalty=0.0))]
fn grad(
    params: PyRef<'_, PySteeringParams>,
    samples: Vec<PyRef<'_, PySample>>,
    l2_penalty: f64,
) -> PyResult<PySteeringParams> {
    let inner = trainer::grad(&params.inner, &unwrap_samples(&samples), l2_penalty).py_err()?;
    Ok(PySteeringParams { inner })
}

#[pyfunction]
#[pyo3(signature = (params, samples, l2_penalty=0.0, step=1e-5))]
fn finite_diff_grad(
    params: PyRef<'_, PySteeringParams>,
    samples: Vec<PyRef<'_, PySample>>,
    l2_penalty: f64,
    step: f64,
) -> PyResult<PySteeringParams> {
    let inner = trainer::finite_diff_grad(&params.inner, &unwrap_samples(&samples), l2_penalty, step).py_err()?;
    Ok(PySteeringParams { inner })
}

#[pyfunction]
#[pyo3(signature = (samples, config=None))]
fn train(py: Python<'_>, samples: Vec<PyRef<'_, PySample>>, config: Option<PyRef<'_, PyTrainConfig>>) -> PyResult<PyTrainResult> {
    let config = match config {
        Some(c) => c.to_core()?,
        None => dualsteer::TrainConfig::default(),
    };
    let data = unwrap_samples(&samples);
    let result = py.detach(|| dualsteer::train(&data, &config)).py_err()?;
    Ok(PyTrainResult {
        params: Py::new(py, PySteeringParams { inner: result.params })?,
        initial_loss: result.initial_loss,
        final_loss: result.final_loss,
        loss_history: result.loss_history,
        epochs_run: result.epochs_run,
    })
}

/// `(train, eval)`, each in input order.
#[pyfunction]
#[pyo3(signature = (samples, fraction=0.2, seed=0, stratify_by_facet=true))]
fn few_shot_split(
    samples: Vec<PyRef<'_, PySample>>,
    fraction: f64,
    seed: u64,
    stratify_by_facet: bool,
) -> PyResult<(Vec<PySample>, Vec<PySample>)> {
    let (tr, ev) = dualsteer::few_shot_split(&unwrap_samples(&samples), fraction, seed, stratify_by_facet).py_err()?;
    Ok((wrap_samples(tr), wrap_samples(ev)))
}

#[pyfunction]
#[pyo3(signature = (d=16, n_per_class=300, seed=0, axis_strength=2.0, noise_sigma=1.0, center_tightness=0.5, collapse_bias=3.0, facet_names=None))]
#[allow(clippy::too_many_arguments)]
fn synth_gen(
    d: usize,
    n_per_class: usize,
    seed: u64,
    axis_strength: f64,
    noise_sigma: f64,
    center_tightness: f64,
    collapse_bias: f64,
    facet_names: Option<Vec<String>>,
) -> PyResult<Vec<PySample>> {
    let config = SynthConfig {
        d,
        n_per_class,
        seed,
        axis_strength,
        noise_sigma,
        center_tightness,
        collapse_bias,
        facet_names: facet_names.unwrap_or_else(|| SynthConfig::default().facet_names),
    };
    Ok(wrap_samples(data::synth_gen(&config).py_err()?))
}

/// `(header, samples)`; the header is a dict.
#[pyfunction]
fn load<'py>(py: Python<'py>, path: std::path::PathBuf) -> PyResult<(Bound<'py, PyAny>, Vec<PySample>)> {
    let (meta, samples) = data::load(&path).py_err()?;
    Ok((to_pyobject(py, &meta)?, wrap_samples(samples)))
}

#[pyfunction]
#[pyo3(signature = (samples, path, layer="", model=""))]
fn save(samples: Vec<PyRef<'_, PySample>>, path: std::path::PathBuf, layer: &str, model: &str) -> PyResult<()> {
    let data = unwrap_samples(&samples);
    let d = data
        .first()
        .map(|s| s.h.dim())
        .ok_or_else(|| to_py_err(dualsteer::Error::EmptyDataset))?;
    data::save(&DatasetMeta::new(d, layer, model), &data, &path).py_err()
}

/// Steered vs zero-shot report as a dict.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    params: PyRef<'_, PySteeringParams>,
    samples: Vec<PyRef<'_, PySample>>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = metrics::evaluate(&params.inner, &unwrap_samples(&samples)).py_err()?;
    to_pyobject(py, &report)
}

#[pyfunction]
fn macro_f1(preds: Vec<String>, gold: Vec<String>) -> PyResult<f64> {
    let p = preds.iter().map(|s| parse_label(s)).collect::<PyResult<Vec<_>>>()?;
    let g = gold.iter().map(|s| parse_label(s)).collect::<PyResult<Vec<_>>>()?;
    metrics::macro_f1(&p, &g).py_err()
}

/// PCA of the hidden states plus ordering and center-band statistics.
#[pyfunction]
#[pyo3(signature = (samples, k=2))]
fn geometry_report<'py>(py: Python<'py>, samples: Vec<PyRef<'_, PySample>>, k: usize) -> PyResult<Bound<'py, PyAny>> {
    let vectors: Vec<HiddenVector> = samples.iter().map(|s| s.inner.h.clone()).collect();
    let labels: Vec<Label> = samples.iter().map(|s| s.inner.y).collect();
    let pca = pca_top_k(&vectors, k).py_err()?;
    let ordering = ordering_score(&pca, &labels).py_err()?;
    let band = center_band_stats(&pca, &labels).py_err()?;
    to_pyobject(
        py,
        &serde_json::json!({ "pca": pca, "ordering": ordering, "center_band": band }),
    )
}

/// Interaction-group statistics; counts only when `params` is `None`.
#[pyfunction]
#[pyo3(signature = (samples, params=None))]
fn group_dynamics<'py>(
    py: Python<'py>,
    samples: Vec<PyRef<'_, PySample>>,
    params: Option<PyRef<'_, PySteeringParams>>,
) -> PyResult<Bound<'py, PyAny>> {
    let data = unwrap_samples(&samples);
    let dynamics = match params {
        Some(p) => geometry::group_dynamics(&p.inner, &data),
        None => geometry::group_counts(&data),
    }
    .py_err()?;
    to_pyobject(py, &dynamics)
}

#[pymodule]
#[pyo3(name = "dualsteer")]
fn dualsteer_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PySteeringParams>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(softplus, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(argmax_label, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(grad, m)?)?;
    m.add_function(wrap_pyfunction!(finite_diff_grad, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(few_shot_split, m)?)?;
    m.add_function(wrap_pyfunction!(synth_gen, m)?)?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_function(wrap_pyfunction!(save, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(geometry_report, m)?)?;
    m.add_function(wrap_pyfunction!(group_dynamics, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
