//! Python module `crownprop`: load an ONNX network, set an input box and
//! bound every output with IBP, CROWN or alpha-CROWN.

use std::path::PathBuf;
use std::time::Duration;

use crownprop::alpha::OptimizerConfig;
use crownprop::engine::{preprocess_c, CrownVariant};
use crownprop::onnx::parse_onnx;
use crownprop::{analyze, AnalysisOptions, BoundedTensor, Error, Method, NetworkGraph, RunReport, Tensor, Verdict};
use pyo3::create_exception;
use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyRuntimeError, PyTimeoutError, PyValueError};
use pyo3::prelude::*;

create_exception!(crownprop, UnsupportedOperatorError, PyValueError);

fn to_py(err: Error) -> PyErr {
    match err {
        Error::UnsupportedOperator(_) => UnsupportedOperatorError::new_err(err.to_string()),
        Error::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => PyFileNotFoundError::new_err(err.to_string()),
        Error::Io { .. } => PyOSError::new_err(err.to_string()),
        Error::Timeout { .. } => PyTimeoutError::new_err(err.to_string()),
        Error::ShapeMismatch(_) | Error::InvalidBounds { .. } | Error::Config(_) | Error::VnnLib(_) => PyValueError::new_err(err.to_string()),
        Error::Onnx(_) | Error::Graph(_) | Error::Cycle | Error::UnsupportedDataType { .. } => PyValueError::new_err(err.to_string()),
        Error::Tape(_) => PyRuntimeError::new_err(err.to_string()),
    }
}

/// Optimizer and relaxation settings accepted as keyword arguments by
/// `compute_bounds`; unset fields keep the library defaults.
#[derive(Clone, Debug, Default)]
pub struct BoundOptions {
    pub variant: Option<String>,
    pub iterations: Option<usize>,
    pub lr: Option<f64>,
    pub lr_decay: Option<f64>,
    pub patience: Option<usize>,
    pub early_stop: Option<bool>,
    pub best_restore: Option<bool>,
    pub optimize_lower: Option<bool>,
    pub optimize_upper: Option<bool>,
    pub timeout: Option<f64>,
}

impl BoundOptions {
    pub fn to_analysis(&self, method: Method) -> crownprop::Result<AnalysisOptions> {
        let variant = match self.variant.as_deref().map(|s| s.to_ascii_lowercase().replace(['-', '_'], "")) {
            None => CrownVariant::Standard,
            Some(v) if v == "standard" || v == "crown" => CrownVariant::Standard,
            Some(v) if v == "crownibp" => CrownVariant::CrownIbp,
            Some(_) => return Err(Error::Config(format!("unknown variant '{}'", self.variant.as_deref().unwrap_or("")))),
        };
        let d = OptimizerConfig::default();
        let optimizer = OptimizerConfig {
            iterations: self.iterations.unwrap_or(d.iterations),
            lr: self.lr.unwrap_or(d.lr),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            patience: self.patience.unwrap_or(d.patience),
            early_stop: self.early_stop.unwrap_or(d.early_stop),
            best_restore: self.best_restore.unwrap_or(d.best_restore),
            optimize_lower: self.optimize_lower.unwrap_or(d.optimize_lower),
            optimize_upper: self.optimize_upper.unwrap_or(d.optimize_upper),
            seed: d.seed,
        };
        optimizer.validate()?;
        let timeout = match self.timeout {
            None => None,
            Some(t) if t.is_finite() && t >= 0.0 => Some(Duration::from_secs_f64(t)),
            Some(t) => return Err(Error::Config(format!("timeout must be a non-negative number of seconds, got {t}"))),
        };
        Ok(AnalysisOptions { method, variant, optimizer, timeout })
    }
}

/// Handle state without any Python types, so it can run with the
/// interpreter lock released.
#[derive(Clone, Debug)]
pub struct Session {
    graph: NetworkGraph,
    input: Option<BoundedTensor>,
    last: Option<RunReport>,
}

impl Session {
    pub fn load(path: impl Into<PathBuf>) -> crownprop::Result<Self> {
        Ok(Session { graph: parse_onnx(path.into())?, input: None, last: None })
    }

    pub fn input_size(&self) -> usize {
        self.graph.input_size()
    }

    pub fn set_input_bounds(&mut self, lower: Vec<f64>, upper: Vec<f64>) -> crownprop::Result<()> {
        let n = self.input_size();
        if lower.len() != n || upper.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "input bounds have lengths {} and {} for a network with {n} inputs",
                lower.len(),
                upper.len()
            )));
        }
        self.input = Some(BoundedTensor::new(Tensor::from_vec(lower), Tensor::from_vec(upper))?);
        Ok(())
    }

    /// Bounds on every network output under the identity spec.
    pub fn compute_bounds(&mut self, method: &str, options: &BoundOptions) -> crownprop::Result<(Vec<f64>, Vec<f64>)> {
        let input = self.input.as_ref().ok_or_else(|| Error::Config("call set_input_bounds before compute_bounds".into()))?;
        let method: Method = method.parse()?;
        let opts = options.to_analysis(method)?;
        let specs = preprocess_c(None, self.graph.output_size())?;
        let report = analyze(&self.graph, input, &specs, &opts)?;
        let branch = &report.branches[0];
        let out = (branch.lower.clone(), branch.upper.clone());
        let timed_out = report.verdict == Verdict::Timeout;
        self.last = Some(report);
        if timed_out {
            return Err(Error::Timeout { partial: Vec::new() });
        }
        Ok(out)
    }

    pub fn last_report(&self) -> Option<&RunReport> {
        self.last.as_ref()
    }
}

/// A loaded network with an input box. `TorchModel` is an alias.
#[pyclass(name = "BoundModel", module = "crownprop")]
pub struct BoundModel {
    session: Session,
}

#[pymethods]
impl BoundModel {
    #[new]
    fn new(py: Python<'_>, path: PathBuf) -> PyResult<Self> {
        let session = py.detach(|| Session::load(path)).map_err(to_py)?;
        Ok(BoundModel { session })
    }

    fn get_input_size(&self) -> usize {
        self.session.input_size()
    }

    #[pyo3(name = "getInputSize")]
    fn get_input_size_camel(&self) -> usize {
        self.session.input_size()
    }

    fn set_input_bounds(&mut self, lower: Vec<f64>, upper: Vec<f64>) -> PyResult<()> {
        self.session.set_input_bounds(lower, upper).map_err(to_py)
    }

    #[pyo3(name = "setInputBounds")]
    fn set_input_bounds_camel(&mut self, lower: Vec<f64>, upper: Vec<f64>) -> PyResult<()> {
        self.set_input_bounds(lower, upper)
    }

    #[pyo3(signature = (
        method = "CROWN",
        *,
        variant = None,
        iterations = None,
        lr = None,
        lr_decay = None,
        patience = None,
        early_stop = None,
        best_restore = None,
        optimize_lower = None,
        optimize_upper = None,
        timeout = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn compute_bounds(
        &mut self,
        py: Python<'_>,
        method: &str,
        variant: Option<String>,
        iterations: Option<usize>,
        lr: Option<f64>,
        lr_decay: Option<f64>,
        patience: Option<usize>,
        early_stop: Option<bool>,
        best_restore: Option<bool>,
        optimize_lower: Option<bool>,
        optimize_upper: Option<bool>,
        timeout: Option<f64>,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let options = BoundOptions {
            variant,
            iterations,
            lr,
            lr_decay,
            patience,
            early_stop,
            best_restore,
            optimize_lower,
            optimize_upper,
            timeout,
        };
        let session = &mut self.session;
        py.detach(|| session.compute_bounds(method, &options)).map_err(to_py)
    }

    /// JSON report of the last `compute_bounds` call, in the CLI's format.
    fn last_report_json(&self) -> Option<String> {
        self.session.last_report().map(|r| r.to_json())
    }

    fn __repr__(&self) -> String {
        format!("BoundModel(inputs={}, outputs={})", self.session.input_size(), self.session.graph.output_size())
    }
}

#[pyfunction]
fn load_model(py: Python<'_>, path: PathBuf) -> PyResult<BoundModel> {
    BoundModel::new(py, path)
}

#[pyfunction]
fn get_input_size(model: &BoundModel) -> usize {
    model.get_input_size()
}

#[pyfunction]
fn set_input_bounds(mut model: PyRefMut<'_, BoundModel>, lower: Vec<f64>, upper: Vec<f64>) -> PyResult<()> {
    model.set_input_bounds(lower, upper)
}

#[pyfunction]
#[pyo3(signature = (model, method = "CROWN"))]
fn compute_bounds(py: Python<'_>, mut model: PyRefMut<'_, BoundModel>, method: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let session = &mut model.session;
    py.detach(|| session.compute_bounds(method, &BoundOptions::default())).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "crownprop")]
fn crownprop_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<BoundModel>()?;
    m.add("TorchModel", m.getattr("BoundModel")?)?;
    m.add("UnsupportedOperatorError", m.py().get_type::<UnsupportedOperatorError>())?;
    m.add_function(wrap_pyfunction!(load_model, m)?)?;
    m.add_function(wrap_pyfunction!(get_input_size, m)?)?;
    m.add_function(wrap_pyfunction!(set_input_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(compute_bounds, m)?)?;
    Ok(())
}
