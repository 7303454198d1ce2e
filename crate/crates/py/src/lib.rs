//! Python bindings. Assignments cross the boundary as one entry per UE:
//! the serving cell index, or `None`.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use conman_core::bench::{self, ExperimentConfig, GnnPolicy, MaxRsrp, MetricTriple};
use conman_core::dqn::{self, TrainConfig};
use conman_core::gnn::GnnParams;
use conman_core::graph::{CapacityMatrix, ConnectionGraph, DEFAULT_D_MAX_M};
use conman_core::net_model::{self, RadioConfig};
use conman_core::xapp::{self, DEFAULT_EDGE_THRESHOLD_DB};
use conman_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())),
        None => Ok(T::default()),
    }
}

#[pyclass(name = "Deployment", module = "conman", from_py_object)]
#[derive(Clone)]
struct PyDeployment(net_model::Deployment);

#[pymethods]
impl PyDeployment {
    #[staticmethod]
    #[pyo3(signature = (seed, n_cells, n_ues, hex_diameter_m = 500.0))]
    fn generate(seed: u64, n_cells: usize, n_ues: usize, hex_diameter_m: f64) -> PyResult<Self> {
        net_model::generate_deployment(seed, n_cells, n_ues, hex_diameter_m, &RadioConfig::default())
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        net_model::Deployment::load(&path).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        net_model::Deployment::from_json(text).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.0.n_cells()
    }

    #[getter]
    fn n_ues(&self) -> usize {
        self.0.n_ues()
    }

    fn rsrp_dbm(&self, cell: usize, ue: usize) -> PyResult<f64> {
        self.0.rsrp_dbm(cell, ue).map_err(py_err)
    }

    fn link_capacity(&self, cell: usize, ue: usize) -> PyResult<f64> {
        self.0.link_capacity(cell, ue).map_err(py_err)
    }

    /// Strongest cell per UE.
    #[pyo3(signature = (d_max_m = DEFAULT_D_MAX_M))]
    fn max_rsrp_assignment(&self, d_max_m: f64) -> Vec<Option<usize>> {
        xapp::max_rsrp_graph(&self.0, d_max_m).assignment().to_vec()
    }

    /// `{"u_th", "u_cov", "u_jain"}` for an assignment on this deployment.
    #[pyo3(signature = (assignment, d_max_m = DEFAULT_D_MAX_M))]
    fn metrics<'py>(&self, py: Python<'py>, assignment: Vec<Option<usize>>, d_max_m: f64) -> PyResult<Bound<'py, PyAny>> {
        let adj = ConnectionGraph::from_deployment(&self.0, d_max_m).cell_adj().clone();
        let g = ConnectionGraph::with_assignment(adj, assignment, d_max_m).map_err(py_err)?;
        let cap = CapacityMatrix::from_deployment(&self.0);
        to_py(py, &MetricTriple::of(&g, &cap).map_err(py_err)?)
    }

    fn __repr__(&self) -> String {
        format!("Deployment(seed={}, n_cells={}, n_ues={})", self.0.seed, self.0.n_cells(), self.0.n_ues())
    }
}

#[pyclass(name = "GnnModel", module = "conman", from_py_object)]
#[derive(Clone)]
struct PyGnnModel(GnnParams);

#[pymethods]
impl PyGnnModel {
    #[staticmethod]
    #[pyo3(signature = (seed = 0, layers = 2, width = 8, init_std = 0.1))]
    fn init(seed: u64, layers: usize, width: usize, init_std: f64) -> PyResult<Self> {
        GnnParams::init(seed, layers, width, init_std).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        GnnParams::load(&path).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        GnnParams::from_json(text).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(py_err)
    }

    #[getter]
    fn layers(&self) -> usize {
        self.0.layers()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.0.n_params()
    }

    /// Max-RSRP for cell-center UEs, greedy GNN decisions for cell-edge UEs.
    #[pyo3(signature = (deployment, edge_threshold_db = DEFAULT_EDGE_THRESHOLD_DB, d_max_m = DEFAULT_D_MAX_M))]
    fn associate(&self, deployment: &PyDeployment, edge_threshold_db: f64, d_max_m: f64) -> PyResult<Vec<Option<usize>>> {
        use bench::AssociationPolicy;
        let policy = GnnPolicy { params: self.0.clone(), edge_threshold_db, d_max_m };
        Ok(policy.associate(&deployment.0).map_err(py_err)?.assignment().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("GnnModel(layers={}, width={})", self.0.layers(), self.0.width())
    }
}

/// Trains on the given deployments. `config_json` holds training fields;
/// missing ones take defaults. Returns the model and the per-episode log.
#[pyfunction]
#[pyo3(signature = (deployments, config_json = None))]
fn train<'py>(
    py: Python<'py>,
    deployments: Vec<PyDeployment>,
    config_json: Option<&str>,
) -> PyResult<(PyGnnModel, Bound<'py, PyAny>)> {
    let cfg: TrainConfig = from_json(config_json)?;
    let deps: Vec<_> = deployments.into_iter().map(|d| d.0).collect();
    let (params, log) = py.detach(|| dqn::train(&cfg, &deps)).map_err(py_err)?;
    Ok((PyGnnModel(params), to_py(py, &log.episodes)?))
}

/// Gain summaries of `model` over max-RSRP for the sweeps in `config_json`.
#[pyfunction]
#[pyo3(signature = (model, config_json = None))]
fn evaluate<'py>(py: Python<'py>, model: &PyGnnModel, config_json: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: ExperimentConfig = from_json(config_json)?;
    let policy = GnnPolicy {
        params: model.0.clone(),
        edge_threshold_db: cfg.train.edge_threshold_db,
        d_max_m: cfg.train.d_max_m,
    };
    let baseline = MaxRsrp { d_max_m: cfg.train.d_max_m };
    let report = py.detach(|| bench::evaluate(&cfg, &policy, &baseline)).map_err(py_err)?;
    to_py(py, &report.summaries())
}

#[pymodule]
fn conman(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDeployment>()?;
    m.add_class::<PyGnnModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
