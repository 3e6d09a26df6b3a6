use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use migrate_core::grpo::{self, ClipConfig, Group};
use migrate_core::harness::trace::{csv_string, CsvRow};
use migrate_core::harness::{self, Method, RunConfig};
use migrate_core::policy::{ContextId, PolicyParams};
use migrate_core::sampler::{Completion, Provenance};
use migrate_core::tasks::{self, GridTask, Split, TaskKind};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_enum<T: serde::de::DeserializeOwned>(name: &str, what: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {name:?}")))
}

/// Feature-linear softmax policy.
#[pyclass(name = "Policy", module = "migrate", skip_from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    inner: PolicyParams,
}

#[pymethods]
impl PyPolicy {
    #[new]
    #[pyo3(signature = (vocab_size, position_buckets, max_len, init_scale = 0.0, seed = 0))]
    fn new(vocab_size: usize, position_buckets: usize, max_len: usize, init_scale: f64, seed: u64) -> PyResult<Self> {
        let inner = if init_scale > 0.0 {
            PolicyParams::random(vocab_size, position_buckets, max_len, init_scale, &mut ChaCha8Rng::seed_from_u64(seed))
        } else {
            PolicyParams::zeros(vocab_size, position_buckets, max_len)
        }
        .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: PolicyParams::from_bytes(data).map_err(value_err)?,
        })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn max_len(&self) -> usize {
        self.inner.max_len()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    /// Per-token log-probabilities under the task context.
    fn logprobs(&self, tokens: Vec<usize>) -> PyResult<Vec<f64>> {
        self.inner.logprobs(ContextId::task(), &tokens).map_err(value_err)
    }

    #[pyo3(signature = (seed, temperature = 1.0))]
    fn sample(&self, seed: u64, temperature: f64) -> PyResult<Vec<usize>> {
        self.inner
            .sample(ContextId::task(), temperature, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Policy(vocab_size={}, feature_dim={}, max_len={})",
            self.inner.vocab_size(),
            self.inner.feature_dim(),
            self.inner.max_len()
        )
    }
}

#[pyfunction]
fn compute_advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    grpo::compute_advantages(&rewards).map_err(value_err)
}

/// Clipped group loss and its gradient. `old_logprobs` defaults to the
/// policy's own log-probabilities (first inner step).
#[pyfunction]
#[pyo3(signature = (policy, completions, rewards, old_logprobs = None, eps_low = 0.2, eps_high = 0.28))]
fn grpo_loss_and_grad(
    policy: &PyPolicy,
    completions: Vec<Vec<usize>>,
    rewards: Vec<f64>,
    old_logprobs: Option<Vec<Vec<f64>>>,
    eps_low: f64,
    eps_high: f64,
) -> PyResult<(f64, Vec<f64>)> {
    let members: Vec<Completion> = completions
        .into_iter()
        .zip(&rewards)
        .map(|(tokens, &r)| {
            let mut c = Completion::new(tokens, String::new(), Provenance::Online, 0);
            c.set_score(r).map(|_| c)
        })
        .collect::<Result<_, _>>()
        .map_err(value_err)?;
    let old = match old_logprobs {
        Some(o) => o,
        None => members
            .iter()
            .map(|c| policy.inner.logprobs(ContextId::task(), &c.tokens))
            .collect::<Result<_, _>>()
            .map_err(value_err)?,
    };
    let group = Group::from_parts(members, rewards, old, 0).map_err(value_err)?;
    let clip = ClipConfig::new(eps_low, eps_high).map_err(value_err)?;
    let (report, grad) = grpo::grpo_loss_and_grad(&policy.inner, &group, clip).map_err(value_err)?;
    Ok((report.loss, grad))
}

#[pyfunction]
fn scalarize(vina: f64, qed: f64) -> f64 {
    tasks::scalarize(vina, qed)
}

/// Mean matched-cell score of a program on an ARC-format task.
#[pyfunction]
#[pyo3(signature = (task_json, program, split = "train"))]
fn eval_grid_program(task_json: &str, program: &str, split: &str) -> PyResult<f64> {
    let task = GridTask::from_json(task_json).map_err(value_err)?;
    let split = match split {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(PyValueError::new_err(format!("split must be train or test, got {other:?}"))),
    };
    Ok(task.eval_text(program, split))
}

/// Default config for a task and method, as JSON.
#[pyfunction]
fn default_config(task: &str, method: &str) -> PyResult<String> {
    let task: TaskKind = parse_enum(task, "task")?;
    let method: Method = parse_enum(method, "method")?;
    Ok(RunConfig::defaults(task, method).to_json())
}

/// Runs a config given as JSON; returns `(summary_json, trace_csv)`.
#[pyfunction]
fn run(py: Python<'_>, config_json: &str) -> PyResult<(String, String)> {
    let config = RunConfig::from_json(config_json).map_err(value_err)?;
    let outcome = py.detach(|| harness::run(&config)).map_err(value_err)?;
    let rows: Vec<CsvRow> = outcome.trace.records.iter().map(CsvRow::from).collect();
    let summary = serde_json::to_string(&outcome.trace.summary).map_err(value_err)?;
    Ok((summary, csv_string(&rows).map_err(value_err)?))
}

#[pymodule]
fn migrate(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(compute_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(grpo_loss_and_grad, m)?)?;
    m.add_function(wrap_pyfunction!(scalarize, m)?)?;
    m.add_function(wrap_pyfunction!(eval_grid_program, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
