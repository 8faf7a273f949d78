//! Python bindings for the core library.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pdectrl_core::backstepping::{backstepping_control, Kernel as CoreKernel};
use pdectrl_core::deeponet::DeepONet as CoreDeepONet;
use pdectrl_core::env::{sample_coefficient, BenchmarkKind, EnvConfig, PdeEnv};
use pdectrl_core::eval::{rollout, Controller};
use pdectrl_core::numerics::Rng;
use pdectrl_core::sac::{load_actor, Actor};
use pdectrl_core::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Config(_) => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn parse_kind(benchmark: &str) -> PyResult<BenchmarkKind> {
    benchmark.parse().map_err(to_py)
}

fn env_config(benchmark: &str, gamma: Option<f64>, horizon: Option<f64>) -> PyResult<EnvConfig> {
    let mut cfg = EnvConfig::defaults(parse_kind(benchmark)?);
    if let Some(g) = gamma {
        cfg.gamma = g;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// A benchmark plant with gym-style `reset`/`step`.
#[pyclass(name = "Env", unsendable)]
struct PyEnv {
    env: PdeEnv,
    rng: Rng,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (benchmark, gamma=None, horizon=None, seed=0))]
    fn new(benchmark: &str, gamma: Option<f64>, horizon: Option<f64>, seed: u64) -> PyResult<Self> {
        let env = PdeEnv::from_config(env_config(benchmark, gamma, horizon)?).map_err(to_py)?;
        Ok(PyEnv {
            env,
            rng: Rng::new(seed),
        })
    }

    /// Starts an episode from `u0` if given, otherwise from a random constant profile.
    #[pyo3(signature = (u0=None))]
    fn reset(&mut self, u0: Option<f64>) -> PyResult<Vec<f64>> {
        match u0 {
            Some(c) => Ok(self.env.reset_to(c).values.clone()),
            None => Ok(self.env.reset(&mut self.rng).map_err(to_py)?.values.clone()),
        }
    }

    /// Returns `(state, reward, done, truncated)`.
    fn step(&mut self, action: f64) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let out = self.env.step(action).map_err(to_py)?;
        Ok((self.env.state().values.clone(), out.reward, out.done, out.truncated))
    }

    fn terminal_bonus(&self) -> f64 {
        self.env.terminal_bonus()
    }

    #[getter]
    fn state(&self) -> Vec<f64> {
        self.env.state().values.clone()
    }

    #[getter]
    fn coefficient(&self) -> Vec<f64> {
        self.env.coefficient().samples().to_vec()
    }

    #[getter]
    fn state_norm(&self) -> f64 {
        self.env.state_norm()
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.env.config().grid.n_points()
    }

    #[getter]
    fn action_bound(&self) -> f64 {
        self.env.config().action_bound
    }

    #[getter]
    fn interaction_steps(&self) -> usize {
        self.env.config().interaction_steps()
    }
}

/// Backstepping kernel for one plant coefficient.
#[pyclass(name = "Kernel", frozen)]
struct PyKernel {
    kernel: CoreKernel,
}

#[pymethods]
impl PyKernel {
    #[new]
    #[pyo3(signature = (benchmark, gamma=None))]
    fn new(benchmark: &str, gamma: Option<f64>) -> PyResult<Self> {
        let cfg = env_config(benchmark, gamma, None)?;
        let coeff = sample_coefficient(cfg.kind, cfg.gamma, &cfg.grid).map_err(to_py)?;
        Ok(PyKernel {
            kernel: CoreKernel::solve(&coeff).map_err(to_py)?,
        })
    }

    /// Boundary gain sampled on the grid.
    #[getter]
    fn gain(&self) -> Vec<f64> {
        self.kernel.gain().to_vec()
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.kernel.residual()
    }

    fn control(&self, state: Vec<f64>) -> PyResult<f64> {
        backstepping_control(&self.kernel, &state).map_err(to_py)
    }
}

/// A trained operator network mapping `(coefficient, state)` to a control.
#[pyclass(name = "DeepONet", frozen)]
struct PyDeepONet {
    model: CoreDeepONet,
}

#[pymethods]
impl PyDeepONet {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDeepONet {
            model: CoreDeepONet::load(path).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.model.n_points()
    }

    fn predict(&self, coefficient: Vec<f64>, state: Vec<f64>) -> PyResult<f64> {
        self.model.forward_scalar(&coefficient, &state, 1.0).map_err(to_py)
    }
}

/// The deterministic policy of a saved agent.
#[pyclass(name = "Agent", frozen)]
struct PyAgent {
    actor: Actor,
}

#[pymethods]
impl PyAgent {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyAgent {
            actor: load_actor(path).map_err(to_py)?,
        })
    }

    fn act(&self, coefficient: Vec<f64>, state: Vec<f64>) -> PyResult<f64> {
        self.actor.mean_action(&coefficient, &state).map_err(to_py)
    }
}

/// Rollout from the constant profile `u0`. `controller` is `None` (open loop), a
/// `Kernel`, a `DeepONet` or an `Agent`. Returns a dict of the sampled
/// trajectories and the summary metrics.
#[pyfunction]
#[pyo3(signature = (benchmark, u0, controller=None, gamma=None, horizon=None))]
fn simulate<'py>(
    py: Python<'py>,
    benchmark: &str,
    u0: f64,
    controller: Option<&Bound<'py, PyAny>>,
    gamma: Option<f64>,
    horizon: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut env = PdeEnv::from_config(env_config(benchmark, gamma, horizon)?).map_err(to_py)?;
    let report = match controller {
        None => rollout(&mut env, Controller::Zero, u0),
        Some(obj) => {
            if let Ok(k) = obj.cast::<PyKernel>() {
                rollout(&mut env, Controller::Backstepping(&k.get().kernel), u0)
            } else if let Ok(m) = obj.cast::<PyDeepONet>() {
                rollout(&mut env, Controller::DeepONet(&m.get().model), u0)
            } else if let Ok(a) = obj.cast::<PyAgent>() {
                rollout(&mut env, Controller::Agent(&a.get().actor), u0)
            } else {
                return Err(PyValueError::new_err(
                    "controller must be a Kernel, DeepONet, Agent or None",
                ));
            }
        }
    }
    .map_err(to_py)?;
    let s = &report.summary;
    let out = PyDict::new(py);
    out.set_item("times", report.times)?;
    out.set_item("norms", report.norms)?;
    out.set_item("controls", report.controls)?;
    out.set_item("overshoot", s.overshoot)?;
    out.set_item("convergence_time", s.convergence_time)?;
    out.set_item("steady_state_error", s.steady_state_error)?;
    out.set_item("total_effort", s.total_effort)?;
    Ok(out)
}

#[pymodule]
fn pdectrl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyDeepONet>()?;
    m.add_class::<PyAgent>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
