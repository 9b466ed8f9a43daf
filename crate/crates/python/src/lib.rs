//! Python module `srsr`: HPD geometry helpers, sparse coding, metrics and
//! the end-to-end pipeline.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use srsr_core::coding::{ista_solve, spg_init, Dictionary, EncodingProblem, SolveStop, SrsrConfig};
use srsr_core::hpd::{airm_distance as airm, validate_hpd, CMatrix, HpdMatrix};
use srsr_core::metrics::{report, ConfusionMatrix, MetricsReport};
use srsr_core::pipeline::{self, PipelineConfig};
use srsr_core::polsar::{load_labels as load_label_raster, SceneSpec};

type Rows = Vec<Vec<Complex64>>;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn hpd(rows: Rows) -> PyResult<HpdMatrix> {
    let m = CMatrix::from_rows(rows).map_err(value_err)?;
    let tol = 1e-10 * m.frobenius_norm().max(1.0);
    validate_hpd(&m, tol).map_err(value_err)
}

fn rows(m: &CMatrix) -> Rows {
    (0..m.dim()).map(|r| (0..m.dim()).map(|c| m.get(r, c)).collect()).collect()
}

/// Affine-invariant distance between two HPD matrices given as nested
/// lists of complex numbers.
#[pyfunction]
fn airm_distance(x: Rows, y: Rows) -> PyResult<f64> {
    airm(&hpd(x)?, &hpd(y)?).map_err(value_err)
}

/// Principal matrix logarithm of an HPD matrix.
#[pyfunction]
fn hpd_log(x: Rows) -> PyResult<Rows> {
    let l = hpd(x)?.log().map_err(value_err)?;
    Ok(rows(l.as_matrix()))
}

/// Sparse non-negative code of `target` over `atoms`, solved to
/// convergence (or `iterations` steps) from the projected-gradient start.
#[pyfunction]
#[pyo3(signature = (target, atoms, lam = 0.5, step = 1e-4, iterations = 500))]
fn encode(target: Rows, atoms: Vec<Rows>, lam: f64, step: f64, iterations: usize) -> PyResult<Vec<f64>> {
    let atoms: Vec<HpdMatrix> = atoms.into_iter().map(hpd).collect::<PyResult<_>>()?;
    let n = atoms.len();
    let dict = Dictionary::new(atoms, vec![1; n]).map_err(value_err)?;
    let problem = EncodingProblem::new(hpd(target)?).map_err(value_err)?;
    let cfg = SrsrConfig {
        lambda: lam,
        step,
        ..SrsrConfig::default()
    };
    cfg.validate().map_err(value_err)?;
    let stop = SolveStop {
        max_iterations: iterations,
        ..SolveStop::default()
    };
    let start = spg_init(&problem, &dict, &cfg);
    Ok(ista_solve(&problem, &start, &dict, &cfg, &stop).code.into_vec())
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("oa", r.overall_accuracy)?;
    d.set_item("aa", r.average_accuracy)?;
    d.set_item("kappa", r.kappa)?;
    d.set_item("f1", r.f1_macro)?;
    d.set_item("miou", r.mean_iou)?;
    d.set_item("total", r.total)?;
    let ua: Vec<Option<f64>> = r.classes.iter().map(|c| c.user_accuracy).collect();
    d.set_item("ua", ua)?;
    Ok(d)
}

/// Accuracy indicators of a confusion matrix (rows = reference).
#[pyfunction]
fn metrics<'py>(py: Python<'py>, matrix: Vec<Vec<u64>>) -> PyResult<Bound<'py, PyDict>> {
    let cm = ConfusionMatrix::from_counts(matrix).map_err(value_err)?;
    report_dict(py, &report(&cm).map_err(value_err)?)
}

/// Writes a simulated 3-class scene into `out_dir`; returns the file paths.
#[pyfunction]
#[pyo3(signature = (out_dir, height = 128, width = 128, looks = 16, seed = 0))]
fn generate<'py>(
    py: Python<'py>,
    out_dir: PathBuf,
    height: usize,
    width: usize,
    looks: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = SceneSpec::three_class(height, width, looks, seed);
    let files = pipeline::generate(&spec, &out_dir).map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("covariance", files.covariance)?;
    d.set_item("labels", files.labels)?;
    d.set_item("pauli", files.pauli)?;
    Ok(d)
}

/// `(height, width, labels)` of a label raster.
#[pyfunction]
fn load_labels(path: PathBuf) -> PyResult<(usize, usize, Vec<u16>)> {
    let m = load_label_raster(&path).map_err(runtime_err)?;
    Ok((m.height(), m.width(), m.labels().to_vec()))
}

/// Pipeline configuration; keys as in the `key = value` config files.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path = None))]
    fn new(path: Option<PathBuf>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => PipelineConfig::load(&p).map_err(value_err)?,
            None => PipelineConfig::default(),
        };
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(value_err)
    }

    fn to_ini(&self) -> String {
        self.inner.to_ini()
    }

    fn __repr__(&self) -> String {
        format!("Config(output={:?})", self.inner.paths.output)
    }
}

/// Runs every stage and writes the artifacts; returns the metrics, the
/// prediction and the per-layer objective trace.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyDict>> {
    let out = py
        .detach(|| pipeline::run(&config.inner))
        .map_err(runtime_err)?;
    let d = report_dict(py, &out.report)?;
    d.set_item("prediction", out.prediction.labels().to_vec())?;
    d.set_item("height", out.prediction.height())?;
    d.set_item("width", out.prediction.width())?;
    let layers = out
        .encoded
        .as_ref()
        .map(|e| e.diagnostics.layer_objectives.clone())
        .unwrap_or_default();
    d.set_item("layer_objectives", layers)?;
    d.set_item("epoch_losses", out.train_report.epoch_losses)?;
    Ok(d)
}

#[pymodule]
fn srsr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(airm_distance, m)?)?;
    m.add_function(wrap_pyfunction!(hpd_log, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(load_labels, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<PyConfig>()?;
    Ok(())
}
