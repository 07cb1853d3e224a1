//! Python module `kanepoc`: networks, fitting, prediction, simulation and diagnostics.
//!
//! Arrays cross the boundary as nested lists of floats.

use kane_core::diagnostics::{dunn_smyth, normal_sup_distance};
use kane_core::evt::{build_threshold_sample, FollowUp, RawDataset, ScalingPolicy, ThresholdOptions, Trigger};
use kane_core::ordinal::fit_ordinal;
use kane_core::simulation::{generate, monte_carlo, true_poc, ScenarioId, StudyOptions};
use kane_core::{fit, FitConfig, FitReport, GLayer, KaneError, KaneNetwork, Model};
use ndarray::Array2;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: KaneError) -> PyErr {
    match e {
        KaneError::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>], cols: usize) -> PyResult<Array2<f64>> {
    if let Some(r) = rows.iter().position(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("row {r} has {} entries, expected {cols}", rows[r].len())));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn scenario(name: &str) -> PyResult<ScenarioId> {
    name.parse().map_err(to_py)
}

fn g_layer(name: &str, categories: Option<usize>) -> PyResult<GLayer> {
    GLayer::from_tag(name, categories.unwrap_or(1)).map_err(to_py)
}

/// Clamped uniform B-spline basis of degree `p` with `m` intervals on [0, 1].
#[pyclass(name = "SplineSpec", module = "kanepoc", frozen)]
pub struct PySplineSpec(kane_core::SplineSpec);

#[pymethods]
impl PySplineSpec {
    #[new]
    #[pyo3(signature = (degree = 3, intervals = 2))]
    fn new(degree: usize, intervals: usize) -> PyResult<Self> {
        kane_core::SplineSpec::new(degree, intervals).map(Self).map_err(to_py)
    }

    #[getter]
    fn basis_count(&self) -> usize {
        self.0.basis_count()
    }

    #[getter]
    fn knots(&self) -> Vec<f64> {
        self.0.knots().to_vec()
    }

    fn design_row(&self, x: f64) -> PyResult<Vec<f64>> {
        self.0.design_row(x).map_err(to_py)
    }

    fn design_row_derivative(&self, x: f64) -> PyResult<Vec<f64>> {
        self.0.design_row_derivative(x).map_err(to_py)
    }
}

/// A KANE network with Gaussian-initialized coefficients.
#[pyclass(name = "Network", module = "kanepoc")]
pub struct PyNetwork(KaneNetwork);

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (widths, degree = 3, intervals = 2, g_layer = "sigmoid", seed = 0))]
    fn new(widths: Vec<usize>, degree: usize, intervals: usize, g_layer: &str, seed: u64) -> PyResult<Self> {
        let spec = kane_core::SplineSpec::new(degree, intervals).map_err(to_py)?;
        let out = widths.last().copied().unwrap_or(1);
        let g = self::g_layer(g_layer, Some(out))?;
        KaneNetwork::initialized(&widths, spec, g, seed).map(Self).map_err(to_py)
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.0.widths().to_vec()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.0.parameter_count()
    }

    fn parameters(&self) -> Vec<f64> {
        self.0.parameters()
    }

    fn set_parameters(&mut self, params: Vec<f64>) -> PyResult<()> {
        self.0.set_parameters(&params).map_err(to_py)
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.forward(&x).map_err(to_py)
    }

    fn forward_batch(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(&x, self.0.input_dim())?;
        self.0.forward_batch(x.view()).map(|a| rows(&a)).map_err(to_py)
    }
}

/// A fitted model: a single network or a Frank-Hall ensemble.
#[pyclass(name = "Model", module = "kanepoc")]
pub struct PyModel(Model);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Model::read(std::path::Path::new(path)).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Model::from_json(text).map(Self).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| PyOSError::new_err(e.to_string()))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.0 {
            Model::Network(_) => "network",
            Model::FrankHall(_) => "frank_hall",
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.surface().dim()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.surface().width()
    }

    /// Surface at points in original feature units.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(&x, self.dim())?;
        self.0.predict_raw(x.view()).map(|(a, _)| rows(&a)).map_err(to_py)
    }

    /// Surface at points already on the unit cube.
    fn evaluate(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(&x, self.dim())?;
        self.0.surface().evaluate_batch(x.view()).map(|a| rows(&a)).map_err(to_py)
    }
}

fn report_dict<'py>(py: Python<'py>, r: &FitReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("final_loss", r.final_loss)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("evaluations", r.evaluations)?;
    d.set_item("gradient_norm", r.gradient_norm)?;
    d.set_item("converged", r.converged)?;
    d.set_item("loss_trace", r.loss_trace.clone())?;
    Ok(d)
}

fn raw_dataset(features: Vec<Vec<f64>>, trigger: Vec<f64>, outcomes: Vec<Option<usize>>, kind: &str, categories: Option<usize>) -> PyResult<RawDataset> {
    let d = features.first().map_or(0, Vec::len);
    let x = matrix(&features, d)?;
    let follow_up = match kind {
        "binary" => FollowUp::Binary(
            outcomes
                .iter()
                .map(|o| match o {
                    None => Ok(None),
                    Some(0) => Ok(Some(false)),
                    Some(1) => Ok(Some(true)),
                    Some(v) => Err(PyValueError::new_err(format!("binary outcome {v} is not 0 or 1"))),
                })
                .collect::<PyResult<_>>()?,
        ),
        "categorical" | "ordinal" => {
            let j = categories.ok_or_else(|| PyValueError::new_err(format!("{kind} outcomes need `categories`")))?;
            if kind == "ordinal" {
                FollowUp::Ordinal { levels: outcomes, categories: j }
            } else {
                FollowUp::Categorical { labels: outcomes, categories: j }
            }
        }
        other => return Err(PyValueError::new_err(format!("unknown outcome kind '{other}'"))),
    };
    RawDataset::new(x, Trigger::Single(trigger), follow_up).map_err(to_py)
}

/// Thresholds `trigger` at quantile `q` and fits on the exceedances.
/// `kind` is "binary", "categorical" (labels 0..J) or "ordinal" (levels 1..=J).
#[pyfunction]
#[pyo3(signature = (features, trigger, outcomes, kind = "binary", categories = None, q = 0.95, seed = 0, max_iterations = 100))]
#[allow(clippy::too_many_arguments)]
fn fit_data<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    trigger: Vec<f64>,
    outcomes: Vec<Option<usize>>,
    kind: &str,
    categories: Option<usize>,
    q: f64,
    seed: u64,
    max_iterations: usize,
) -> PyResult<(PyModel, Vec<Option<Bound<'py, PyDict>>>)> {
    let raw = raw_dataset(features, trigger, outcomes, kind, categories)?;
    let sample = build_threshold_sample(&raw, q, &ThresholdOptions::default()).map_err(to_py)?;
    let cfg = FitConfig { init_seed: seed, max_iterations, ..FitConfig::default() };
    let spec = kane_core::SplineSpec::cubic_two_interval();
    let d = sample.dim();
    let (model, reports) = py
        .detach(|| -> kane_core::Result<(Model, Vec<Option<FitReport>>)> {
            match kind {
                "ordinal" => {
                    let m = fit_ordinal(&sample, &KaneNetwork::canonical_widths(d, GLayer::Sigmoid), spec, &cfg)?;
                    let r = m.reports.clone();
                    Ok((Model::FrankHall(m), r))
                }
                _ => {
                    let g = if kind == "binary" { GLayer::Sigmoid } else { GLayer::Softmax { categories: categories.unwrap_or(2) } };
                    let (e, r) = fit(&sample, &KaneNetwork::canonical_widths(d, g), spec, g, &cfg)?;
                    Ok((Model::Network(e), vec![Some(r)]))
                }
            }
        })
        .map_err(to_py)?;
    let dicts = reports.iter().map(|r| r.as_ref().map(|r| report_dict(py, r)).transpose()).collect::<PyResult<_>>()?;
    Ok((PyModel(model), dicts))
}

/// One draw of a simulation scenario as a dict of lists.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, scenario: &str, n: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let draw = generate(self::scenario(scenario)?, n, seed).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("features", rows(&draw.raw.features))?;
    let Trigger::Single(y) = &draw.raw.trigger else { unreachable!("scenarios have one trigger") };
    d.set_item("trigger", y.clone())?;
    match &draw.raw.follow_up {
        FollowUp::Binary(z) => {
            d.set_item("kind", "binary")?;
            d.set_item("outcomes", z.iter().map(|o| o.map(|b| b as usize)).collect::<Vec<_>>())?;
        }
        FollowUp::Categorical { labels, categories } => {
            d.set_item("kind", "categorical")?;
            d.set_item("categories", *categories)?;
            d.set_item("outcomes", labels.clone())?;
        }
        _ => unreachable!("scenarios draw binary or categorical outcomes"),
    }
    d.set_item("threshold", draw.threshold)?;
    Ok(d)
}

/// The scenario's limiting surface at a point of the unit cube.
#[pyfunction(name = "true_poc")]
fn py_true_poc(scenario: &str, x: Vec<f64>) -> PyResult<Vec<f64>> {
    true_poc(self::scenario(scenario)?, &x).map_err(to_py)
}

/// Monte Carlo study of one (scenario, n) cell.
#[pyfunction]
#[pyo3(signature = (scenario, n, replicates, seed = 1, threads = None))]
fn study<'py>(py: Python<'py>, scenario: &str, n: usize, replicates: usize, seed: u64, threads: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let id = self::scenario(scenario)?;
    let opts = StudyOptions { threads, ..StudyOptions::new(id, FitConfig::default()) };
    let s = py.detach(|| monte_carlo(id, n, replicates, seed, &opts)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mise", s.mean_curve_ise)?;
    d.set_item("mean_ise", s.mean_ise)?;
    d.set_item("median_ise", s.median_ise)?;
    d.set_item("failures", s.failures)?;
    d.set_item("n_u", s.records.iter().map(|r| r.n_u).collect::<Vec<_>>())?;
    Ok(d)
}

/// Dunn-Smyth residual trajectories of a binary model on data it was fitted to.
/// Returns the trajectories and the sup distance of the pooled residuals to N(0, 1).
#[pyfunction]
#[pyo3(signature = (model, features, trigger, outcomes, trajectories = 10, seed = 0))]
fn residuals(
    model: &PyModel,
    features: Vec<Vec<f64>>,
    trigger: Vec<f64>,
    outcomes: Vec<Option<usize>>,
    trajectories: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let Model::Network(est) = &model.0 else {
        return Err(PyValueError::new_err("residuals need a binary network model"));
    };
    let raw = raw_dataset(features, trigger, outcomes, "binary", None)?;
    let opts = ThresholdOptions { scaling: ScalingPolicy::Fixed(est.scaling.clone()), ..Default::default() };
    let sample = build_threshold_sample(&raw, est.quantile_level, &opts).map_err(to_py)?;
    let set = dunn_smyth(est, &sample, trajectories, seed, "python").map_err(to_py)?;
    let dist = normal_sup_distance(&set.pooled());
    Ok((set.trajectories, dist))
}

#[pymodule]
fn kanepoc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySplineSpec>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit_data, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(py_true_poc, m)?)?;
    m.add_function(wrap_pyfunction!(study, m)?)?;
    m.add_function(wrap_pyfunction!(residuals, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_checks_ragged_rows() {
        assert!(matrix(&[vec![1.0, 2.0], vec![3.0]], 2).is_err());
        let m = matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]], 2).unwrap();
        assert_eq!(rows(&m), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn raw_dataset_kinds() {
        let x = vec![vec![0.5]; 3];
        let y = vec![1.0, 2.0, 3.0];
        let r = raw_dataset(x.clone(), y.clone(), vec![Some(1), None, Some(0)], "binary", None).unwrap();
        assert_eq!(r.follow_up, FollowUp::Binary(vec![Some(true), None, Some(false)]));
        assert!(raw_dataset(x.clone(), y.clone(), vec![Some(2), None, None], "binary", None).is_err());
        assert!(raw_dataset(x.clone(), y.clone(), vec![Some(2); 3], "ordinal", None).is_err());
        assert!(raw_dataset(x, y, vec![Some(1); 3], "weird", None).is_err());
    }
}
