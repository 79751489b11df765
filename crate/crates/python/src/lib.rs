use std::path::PathBuf;
use std::sync::OnceLock;

use ::lod_ocp::cli::{self, Command, RunConfig};
use ::lod_ocp::control::{self, DesiredState, Pipeline as CorePipeline, ReducedSystem, SolveResult};
use ::lod_ocp::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::InvalidGrid(_) | Error::InvalidField(_) => {
            PyValueError::new_err(err.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn config_from(config: Option<&str>, preset: Option<&str>) -> PyResult<RunConfig> {
    match (config, preset) {
        (Some(text), p) => cli::parse_config(text, p),
        (None, Some(p)) => cli::preset(p),
        (None, None) => Ok(RunConfig::default()),
    }
    .map_err(to_py)
}

/// A computed state/adjoint pair with its control.
#[pyclass(frozen)]
struct Solution {
    inner: SolveResult,
}

#[pymethods]
impl Solution {
    /// Adjoint nodal values.
    #[getter]
    fn p(&self) -> Vec<f64> {
        self.inner.solution.p().to_vec()
    }

    /// State nodal values.
    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.solution.y().to_vec()
    }

    /// Control `u = p / γ`.
    #[getter]
    fn u(&self) -> Vec<f64> {
        self.inner.control.clone()
    }

    #[getter]
    fn energy_norm(&self) -> f64 {
        self.inner.energy_norm
    }

    #[getter]
    fn l2_norm(&self) -> f64 {
        self.inner.l2_norm
    }

    #[getter]
    fn kkt_residual(&self) -> f64 {
        self.inner.kkt_residual
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }

    fn __repr__(&self) -> String {
        format!(
            "Solution(n={}, energy_norm={:.6e}, kkt_residual={:.3e})",
            self.inner.solution.dim(),
            self.inner.energy_norm,
            self.inner.kkt_residual
        )
    }
}

/// Problem setup with lazily built correctors and reduced system.
#[pyclass(frozen)]
struct Pipeline {
    inner: CorePipeline,
    config: RunConfig,
    reduced: OnceLock<ReducedSystem>,
}

impl Pipeline {
    fn reduced(&self) -> PyResult<&ReducedSystem> {
        if let Some(r) = self.reduced.get() {
            return Ok(r);
        }
        let sys = self
            .inner
            .reduced_system(self.inner.corrector_kind())
            .map_err(to_py)?;
        Ok(self.reduced.get_or_init(|| sys))
    }
}

#[pymethods]
impl Pipeline {
    /// `config` is a JSON object with the CLI configuration keys; `preset`
    /// names the base preset.
    #[new]
    #[pyo3(signature = (config=None, preset=None))]
    fn new(py: Python<'_>, config: Option<&str>, preset: Option<&str>) -> PyResult<Self> {
        let cfg = config_from(config, preset)?;
        let problem = cfg.base_problem().map_err(to_py)?;
        let inner = py.detach(|| CorePipeline::new(problem)).map_err(to_py)?;
        Ok(Self {
            inner,
            config: cfg,
            reduced: OnceLock::new(),
        })
    }

    #[getter]
    fn n_fine(&self) -> usize {
        self.inner.grid.n_fine()
    }

    #[getter]
    fn n_coarse(&self) -> usize {
        self.inner.grid.n_coarse()
    }

    /// Localization steps, `None` in ideal mode.
    #[getter]
    fn k(&self) -> Option<usize> {
        self.inner.config.k()
    }

    /// The resolved configuration as JSON.
    #[getter]
    fn config(&self) -> String {
        serde_json::to_string(&self.config).expect("serializable")
    }

    fn fine_positions(&self) -> Vec<(f64, f64)> {
        (0..self.inner.grid.n_fine())
            .map(|f| {
                let [x, y] = self.inner.grid.fine_node_position(f);
                (x, y)
            })
            .collect()
    }

    /// Lower and upper coefficient bounds.
    fn bounds(&self) -> (f64, f64) {
        self.inner.field.bounds()
    }

    fn solve_fine(&self, py: Python<'_>) -> PyResult<Solution> {
        let inner = py.detach(|| self.inner.solve_fine()).map_err(to_py)?;
        Ok(Solution { inner })
    }

    fn solve_coarse(&self, py: Python<'_>) -> PyResult<Solution> {
        let inner = py.detach(|| self.inner.solve_coarse()).map_err(to_py)?;
        Ok(Solution { inner })
    }

    /// Multiscale solve in the configured mode, optionally for another
    /// constant desired state. The reduced system is factorized once.
    #[pyo3(signature = (y_d=None))]
    fn solve_multiscale(&self, py: Python<'_>, y_d: Option<f64>) -> PyResult<Solution> {
        py.detach(|| {
            let sys = self.reduced()?;
            let load = match y_d {
                Some(v) => self.inner.load_for(&DesiredState::Constant(v)),
                None => self.inner.load.clone(),
            };
            self.inner.solve_reduced(sys, &load).map_err(to_py)
        })
        .map(|inner| Solution { inner })
    }

    /// Relative energy and L2 errors of `approx` against `reference`.
    fn errors(&self, reference: &Solution, approx: &Solution) -> PyResult<(f64, f64)> {
        control::compute_errors(&reference.inner.solution, &approx.inner.solution, &self.inner.ops)
            .map_err(to_py)
    }

    /// Spectral estimates of the Schwarz-preconditioned kernel operator.
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = py.detach(|| self.inner.diagnostics()).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("lambda_min", d.lambda_min)?;
        out.set_item("lambda_max", d.lambda_max)?;
        out.set_item("kappa", d.kappa)?;
        out.set_item("c_star", d.c_star)?;
        out.set_item("d_star", d.d_star)?;
        out.set_item("q", d.q)?;
        Ok(out)
    }
}

/// Runs a CLI subcommand, writes its files into `out` and returns the
/// manifest as JSON.
#[pyfunction]
#[pyo3(signature = (command, out, config=None, preset=None))]
fn run(py: Python<'_>, command: &str, out: PathBuf, config: Option<&str>, preset: Option<&str>) -> PyResult<String> {
    let cmd = match command {
        "solve" => Command::Solve,
        "convergence" => Command::Convergence,
        "decay" => Command::Decay,
        "spectrum" => Command::Spectrum,
        "basis" => Command::Basis,
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    };
    let cfg = config_from(config, preset)?;
    let manifest = py.detach(|| cli::execute(cmd, &cfg, &out)).map_err(to_py)?;
    Ok(serde_json::to_string(&manifest).expect("serializable"))
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    cli::PRESETS.to_vec()
}

/// `k = j ⌈ln(1/H)⌉`.
#[pyfunction]
fn choose_k(coarse_h: f64, j: usize) -> usize {
    control::choose_k(coarse_h, j)
}

#[pymodule]
fn lod_ocp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pipeline>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(choose_k, m)?)?;
    Ok(())
}
