//! Python bindings for the scenario generator.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ::safegen::baselines;
use ::safegen::heatmap;
use ::safegen::io;
use ::safegen::metrics;
use ::safegen::policy;
use ::safegen::sim::{Environment, Outcome};
use ::safegen::{encode_state, EnvState, EpochRecord, ExperimentConfig, PolicyParams, Preset, Route, RouteSet, ScenarioGraph, ScenarioSpec};

fn err(e: ::safegen::Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ::safegen::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// Names of the built-in scenario families.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    Preset::ALL.iter().map(|p| p.name()).collect()
}

/// Names of the built-in routes.
#[pyfunction]
fn routes() -> Vec<String> {
    RouteSet::all_names()
}

#[pyclass(name = "Config", module = "safegen", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let p: Preset = name.parse().py()?;
        Ok(PyConfig { inner: ExperimentConfig::for_preset(p) })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig { inner: ExperimentConfig::from_toml(text).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig { inner: ExperimentConfig::load(&path).py()? })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().py()
    }

    fn graph(&self) -> PyResult<PyGraph> {
        Ok(PyGraph { inner: self.inner.graph().py()? })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.train.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.train.seed = v;
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.train.epochs
    }

    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.train.epochs = v;
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.train.batch_size
    }

    #[setter]
    fn set_batch_size(&mut self, v: usize) {
        self.inner.train.batch_size = v;
    }

    #[getter]
    fn learning_rate(&self) -> f64 {
        self.inner.train.learning_rate
    }

    #[setter]
    fn set_learning_rate(&mut self, v: f64) {
        self.inner.train.learning_rate = v;
    }

    /// Environment state for a named route at a target speed in km/h.
    fn state(&self, route: &str, speed_kmh: f64) -> PyResult<PyState> {
        let r = self
            .inner
            .routes()
            .py()?
            .into_iter()
            .find(|r| r.name() == route)
            .or_else(|| RouteSet::find(route))
            .ok_or_else(|| PyValueError::new_err(format!("unknown route '{route}'")))?;
        Ok(PyState { inner: encode_state(&r, speed_kmh, &self.inner.encoding).py()? })
    }

    fn __repr__(&self) -> String {
        format!("Config(scenario={:?}, seed={})", self.inner.scenario.name, self.inner.train.seed)
    }
}

#[pyclass(name = "Graph", module = "safegen", skip_from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: ScenarioGraph,
}

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let p: Preset = name.parse().py()?;
        Ok(PyGraph { inner: ScenarioGraph::preset(p) })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyGraph { inner: ScenarioGraph::from_toml(text).py()? })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().py()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn blocks(&self) -> Vec<String> {
        self.inner.blocks.iter().map(|b| b.name.clone()).collect()
    }

    fn parents(&self, block: &str) -> PyResult<Vec<String>> {
        Ok(self.inner.block(block).py()?.parents.clone())
    }

    /// Physical bounds of a block.
    fn bounds(&self, block: &str) -> PyResult<(f64, f64)> {
        let b = self.inner.block(block).py()?;
        Ok((b.lower(), b.upper()))
    }

    fn without_parents(&self) -> Self {
        PyGraph { inner: self.inner.without_parents() }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Graph({:?}, blocks={:?})", self.inner.name, self.blocks())
    }
}

#[pyclass(name = "State", module = "safegen", skip_from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: EnvState,
}

#[pymethods]
impl PyState {
    #[staticmethod]
    #[pyo3(signature = (route, speed_kmh, config=None))]
    fn new(route: &str, speed_kmh: f64, config: Option<&PyConfig>) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner.clone()).unwrap_or_else(|| ExperimentConfig::for_preset(Preset::CyclistCrossing));
        PyConfig { inner: cfg }.state(route, speed_kmh)
    }

    #[getter]
    fn route(&self) -> String {
        self.inner.route.name().to_string()
    }

    #[getter]
    fn speed_kmh(&self) -> f64 {
        self.inner.target_speed_kmh
    }

    #[getter]
    fn encoded(&self) -> Vec<f64> {
        self.inner.encoded.clone()
    }

    fn waypoints(&self) -> Vec<(f64, f64)> {
        self.inner.route.waypoints().iter().map(|p| (p[0], p[1])).collect()
    }
}

fn outcome_dict<'py>(py: Python<'py>, o: &Outcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("reward", o.reward)?;
    d.set_item("collision", o.collision)?;
    d.set_item("route_occupied", o.route_occupied)?;
    d.set_item("min_separation", o.min_separation)?;
    Ok(d)
}

fn spec_dict<'py>(py: Python<'py>, graph: &ScenarioGraph, spec: &ScenarioSpec) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (b, v) in graph.blocks.iter().zip(&spec.physical_values) {
        d.set_item(&b.name, *v)?;
    }
    Ok(d)
}

fn record_dict<'py>(py: Python<'py>, r: &EpochRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("mean_reward", r.mean_reward)?;
    d.set_item("collision_rate", r.collision_rate())?;
    d.set_item("entropy", r.mean_entropy)?;
    d.set_item("sigma", r.mean_sigma)?;
    d.set_item("grad_norm", r.grad_norm)?;
    Ok(d)
}

fn spec_from_values(graph: &ScenarioGraph, values: &Bound<'_, PyDict>) -> PyResult<ScenarioSpec> {
    let mut out = Vec::with_capacity(graph.len());
    for b in &graph.blocks {
        let v = values
            .get_item(&b.name)?
            .ok_or_else(|| PyValueError::new_err(format!("missing value for block '{}'", b.name)))?;
        out.push(v.extract::<f64>()?);
    }
    if values.len() != graph.len() {
        return Err(PyValueError::new_err(format!("expected {} values, got {}", graph.len(), values.len())));
    }
    graph.spec_from_physical(&out).py()
}

/// Simulates one scenario given physical block values.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, config: &PyConfig, values: &Bound<'py, PyDict>, state: &PyState) -> PyResult<Bound<'py, PyDict>> {
    let graph = config.inner.graph().py()?;
    let spec = spec_from_values(&graph, values)?;
    let outcome = config.inner.environment().evaluate(&spec, &state.inner, &graph).py()?;
    outcome_dict(py, &outcome)
}

#[pyclass(name = "Policy", module = "safegen", skip_from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    graph: ScenarioGraph,
    params: PolicyParams,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    #[pyo3(signature = (path, config, independent=false))]
    fn load(path: PathBuf, config: &PyConfig, independent: bool) -> PyResult<Self> {
        let mut graph = config.inner.graph().py()?;
        if independent {
            graph = graph.without_parents();
        }
        let params = io::load_checkpoint(&path, &graph, config.inner.encoding.dim()).py()?;
        Ok(PyPolicy { graph, params })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_checkpoint(&path, &self.params).py()
    }

    #[getter]
    fn graph(&self) -> PyGraph {
        PyGraph { inner: self.graph.clone() }
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Draws `n` scenarios; each is a dict of physical block values.
    #[pyo3(signature = (state, n=1, seed=0))]
    fn sample<'py>(&self, py: Python<'py>, state: &PyState, n: usize, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let s = policy::sample(&self.params, &state.inner, &self.graph, &mut rng).py()?;
                spec_dict(py, &self.graph, &s.spec)
            })
            .collect()
    }

    /// Scenario built from every head's mean, in physical units.
    fn mean<'py>(&self, py: Python<'py>, state: &PyState) -> PyResult<Bound<'py, PyDict>> {
        let raw = self.params.mean_actions(&state.inner.encoded, &self.graph).py()?;
        let spec = self.graph.spec_from_physical(&self.graph.rescale_all(&raw).py()?).py()?;
        spec_dict(py, &self.graph, &spec)
    }

    /// Raw-space (mu, sigma) of one head with parents fixed at physical values.
    #[pyo3(signature = (state, block, given=Vec::new()))]
    fn conditional(&self, state: &PyState, block: &str, given: Vec<(String, f64)>) -> PyResult<(f64, f64)> {
        let h = heatmap::policy_heatmap(&self.params, &state.inner.encoded, &self.graph, block, 2, &given).py()?;
        Ok((h.mu, h.sigma))
    }

    /// Cell centers and probabilities over one block.
    #[pyo3(signature = (state, block, bins=heatmap::DEFAULT_BINS_1D, given=Vec::new()))]
    fn heatmap(&self, state: &PyState, block: &str, bins: usize, given: Vec<(String, f64)>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let h = heatmap::policy_heatmap(&self.params, &state.inner.encoded, &self.graph, block, bins, &given).py()?;
        let centers = (0..h.axis.bins).map(|i| h.axis.center(i)).collect();
        Ok((centers, h.cells))
    }

    /// Joint field over two blocks: x centers, y centers, rows of probabilities indexed [y][x].
    #[pyo3(signature = (state, x_block, y_block, bins=heatmap::DEFAULT_BINS_2D, given=Vec::new()))]
    #[allow(clippy::type_complexity)]
    fn joint_heatmap(
        &self,
        state: &PyState,
        x_block: &str,
        y_block: &str,
        bins: usize,
        given: Vec<(String, f64)>,
    ) -> PyResult<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
        let h = heatmap::joint_heatmap(&self.params, &state.inner.encoded, &self.graph, x_block, y_block, bins, &given).py()?;
        let xs = (0..h.x.bins).map(|i| h.x.center(i)).collect();
        let ys = (0..h.y.bins).map(|j| h.y.center(j)).collect();
        let rows = h.cells.chunks(h.x.bins).map(|r| r.to_vec()).collect();
        Ok((xs, ys, rows))
    }
}

#[pyclass(name = "Trainer", module = "safegen", skip_from_py_object)]
struct PyTrainer {
    inner: ::safegen::Trainer<'static, Environment>,
    env: &'static Environment,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (config, independent=false))]
    fn new(config: &PyConfig, independent: bool) -> PyResult<Self> {
        let cfg = &config.inner;
        let mut graph = cfg.graph().py()?;
        if independent {
            graph = graph.without_parents();
        }
        let sampler = cfg.sampler().py()?;
        // one small allocation per trainer, released at exit
        let env: &'static Environment = Box::leak(Box::new(cfg.environment()));
        let inner = ::safegen::Trainer::new(graph, cfg.train.clone(), sampler, env).py()?;
        Ok(PyTrainer { inner, env })
    }

    fn train_epoch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let rec = py.detach(|| self.inner.train_epoch()).py()?;
        record_dict(py, &rec)
    }

    /// Runs the remaining configured epochs.
    fn train<'py>(&mut self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let recs = py.detach(|| self.inner.train(|_, _| Ok(()))).py()?;
        recs.iter().map(|r| record_dict(py, r)).collect()
    }

    #[getter]
    fn epochs_done(&self) -> usize {
        self.inner.epochs_done()
    }

    #[getter]
    fn rollouts(&self) -> usize {
        self.env.rollouts()
    }

    fn policy(&self) -> PyPolicy {
        PyPolicy { graph: self.inner.graph.clone(), params: self.inner.params.clone() }
    }
}

fn ranked<'py>(py: Python<'py>, graph: &ScenarioGraph, results: &[baselines::Scored]) -> PyResult<Vec<(Bound<'py, PyDict>, Bound<'py, PyDict>)>> {
    results.iter().map(|s| Ok((spec_dict(py, graph, &s.spec)?, outcome_dict(py, &s.outcome)?))).collect()
}

/// Exhaustive grid over the configured step sizes, best first.
#[pyfunction]
fn grid_search<'py>(py: Python<'py>, config: &PyConfig, state: &PyState) -> PyResult<Vec<(Bound<'py, PyDict>, Bound<'py, PyDict>)>> {
    let graph = config.inner.graph().py()?;
    let grid = config.inner.grid(&graph);
    let env = config.inner.environment();
    let out = py.detach(|| baselines::grid_search(&graph, &state.inner, &grid, &env)).py()?;
    ranked(py, &graph, &out)
}

/// Uniformly random scenarios, best first.
#[pyfunction]
#[pyo3(signature = (config, state, count, seed=0))]
fn random_sampling<'py>(
    py: Python<'py>,
    config: &PyConfig,
    state: &PyState,
    count: usize,
    seed: u64,
) -> PyResult<Vec<(Bound<'py, PyDict>, Bound<'py, PyDict>)>> {
    let graph = config.inner.graph().py()?;
    let env = config.inner.environment();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = baselines::random_sampling(&graph, &state.inner, count, &mut rng, &env).py()?;
    baselines::rank(&mut out);
    ranked(py, &graph, &out)
}

/// Hand-authored scenario for a preset.
#[pyfunction]
fn human_design<'py>(py: Python<'py>, preset: &str) -> PyResult<Bound<'py, PyDict>> {
    let p: Preset = preset.parse().py()?;
    let graph = ScenarioGraph::preset(p);
    let spec = baselines::human_design(&graph, preset).py()?;
    spec_dict(py, &graph, &spec)
}

/// Epoch at which a per-epoch collision-rate series stabilizes, or None.
#[pyfunction]
fn stability_epoch(rates: Vec<f64>) -> Option<usize> {
    metrics::stability_epoch(&rates)
}

/// Straight route of the given length, usable wherever a route name is not.
#[pyfunction]
fn straight_route_state(length: f64, speed_kmh: f64) -> PyResult<PyState> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(PyValueError::new_err(format!("route length must be positive, got {length}")));
    }
    let route = Route::straight("straight", length);
    let enc = ExperimentConfig::for_preset(Preset::CyclistCrossing).encoding;
    Ok(PyState { inner: encode_state(&route, speed_kmh, &enc).py()? })
}

#[pymodule]
#[pyo3(name = "safegen")]
fn safegen_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(routes, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    m.add_function(wrap_pyfunction!(random_sampling, m)?)?;
    m.add_function(wrap_pyfunction!(human_design, m)?)?;
    m.add_function(wrap_pyfunction!(stability_epoch, m)?)?;
    m.add_function(wrap_pyfunction!(straight_route_state, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
