//! Python bindings. Structured values cross the boundary as JSON and come
//! out as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use blicket_core::defaults::ConditionDefaults;
use blicket_core::environment::{
    assign_roles_with, create_episode, Action, Answer, Condition, EnvState, EpisodeConfig, RoleOverrides, RuleType,
};
use blicket_core::experiment::{cmd_analyze, cmd_run, cmd_verify_stats, RunOptions, RunPlan};
use blicket_core::graph::{base_graph, ContextGraph};
use blicket_core::harness::{run_episode as harness_run, EpisodeOptions, Policy, Scaffolding, Tier};
use blicket_core::metrics::{classify_episode as classify, summarize_run};
use blicket_core::monitor::HeuristicEvaluator;
use blicket_core::objects::{ObjectId, ObjectSet};
use blicket_core::policies::{BasePolicy, GraphPolicy};
use blicket_core::report::{analyze, render_text};
use blicket_core::stats::{self, ContingencyTable, Sided};
use blicket_core::trace::EpisodeTrace;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn condition(name: &str) -> PyResult<Condition> {
    Condition::parse(name).ok_or_else(|| value_err(format!("unknown condition {name}")))
}

fn tier(name: &str) -> PyResult<Tier> {
    Tier::parse(name).ok_or_else(|| value_err(format!("unknown tier {name}")))
}

fn sample_config(cond: &str, object_count: u8, seed: u64, switch_point: Option<u32>) -> PyResult<EpisodeConfig> {
    let overrides = RoleOverrides { switch_point, ..Default::default() };
    assign_roles_with(&ConditionDefaults::shipped(), &overrides, condition(cond)?, object_count, seed).map_err(value_err)
}

/// Parse "place A", "remove A" or "check conjunctive A,B".
fn parse_action(text: &str) -> PyResult<Action> {
    let mut parts = text.split_whitespace();
    let verb = parts.next().unwrap_or("").to_ascii_lowercase();
    let object = |s: Option<&str>| -> PyResult<ObjectId> { s.unwrap_or("").parse().map_err(value_err) };
    match verb.as_str() {
        "place" => Ok(Action::Place { object: object(parts.next())? }),
        "remove" => Ok(Action::Remove { object: object(parts.next())? }),
        "check" => {
            let rule = parts.next().and_then(RuleType::parse).ok_or_else(|| value_err("check needs a rule type"))?;
            let set: ObjectSet = parts.collect::<String>().parse().map_err(value_err)?;
            Ok(Action::Check { answer: Answer { rule_type: rule, claimed_blickets: set } })
        }
        "noop" => Ok(Action::Noop),
        _ => Err(value_err(format!("unrecognised action {text:?}"))),
    }
}

// ---------------------------------------------------------------------------

/// A single blicket episode.
#[pyclass(name = "Environment", module = "blicket")]
struct PyEnvironment {
    state: EnvState,
}

#[pymethods]
impl PyEnvironment {
    #[new]
    #[pyo3(signature = (condition, object_count = 5, seed = 0, switch_point = None))]
    fn new(condition: &str, object_count: u8, seed: u64, switch_point: Option<u32>) -> PyResult<Self> {
        let config = sample_config(condition, object_count, seed, switch_point)?;
        Ok(Self { state: create_episode(config).map_err(value_err)? })
    }

    /// Build from a config dict as produced by `assign_roles`.
    #[staticmethod]
    fn from_config(py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<Self> {
        let text: String = py.import("json")?.call_method1("dumps", (config,))?.extract()?;
        let config: EpisodeConfig = serde_json::from_str(&text).map_err(value_err)?;
        Ok(Self { state: create_episode(config).map_err(value_err)? })
    }

    /// Apply an action and return the observation dict.
    fn step<'py>(&mut self, py: Python<'py>, action: &str) -> PyResult<Bound<'py, PyAny>> {
        let obs = self.state.step(&parse_action(action)?).map_err(value_err)?;
        to_py(py, &obs)
    }

    #[getter]
    fn on_detector(&self) -> Vec<String> {
        self.state.on_detector().iter().map(|o| o.to_string()).collect()
    }

    #[getter]
    fn steps_remaining(&self) -> u32 {
        self.state.steps_remaining()
    }

    #[getter]
    fn activation_count(&self) -> u32 {
        self.state.activation_count()
    }

    #[getter]
    fn switched(&self) -> bool {
        self.state.switched()
    }

    #[getter]
    fn terminated(&self) -> bool {
        self.state.terminated()
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.state.config())
    }

    #[getter]
    fn verdict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.state.verdict())
    }
}

/// The workflow graph shown to scaffolded agents.
#[pyclass(name = "ContextGraph", module = "blicket")]
struct PyContextGraph {
    graph: ContextGraph,
}

#[pymethods]
impl PyContextGraph {
    #[new]
    fn new() -> Self {
        Self { graph: base_graph() }
    }

    fn render(&self) -> String {
        self.graph.render()
    }

    #[getter]
    fn current(&self) -> String {
        self.graph.current().to_string()
    }

    fn states(&self) -> Vec<String> {
        self.graph.states().iter().map(|s| s.name.clone()).collect()
    }

    fn has_edge(&self, source: &str, target: &str) -> bool {
        self.graph.has_edge(source, target)
    }

    /// Attempt a move; returns whether it was accepted.
    fn transition(&mut self, target: &str, step: u32) -> bool {
        self.graph.validate_transition(target, step).accepted()
    }
}

// ---------------------------------------------------------------------------

#[pyfunction]
#[pyo3(signature = (condition, object_count = 5, seed = 0, switch_point = None))]
fn assign_roles<'py>(py: Python<'py>, condition: &str, object_count: u8, seed: u64, switch_point: Option<u32>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &sample_config(condition, object_count, seed, switch_point)?)
}

/// Run one episode with a scripted policy and the heuristic evaluator;
/// returns the trace as JSON text.
#[pyfunction]
#[pyo3(signature = (tier, condition, seed = 0, object_count = 5, switch_point = None, target_activations = 3))]
fn run_episode(tier: &str, condition: &str, seed: u64, object_count: u8, switch_point: Option<u32>, target_activations: u32) -> PyResult<String> {
    let t = self::tier(tier)?;
    let config = sample_config(condition, object_count, seed, switch_point)?;
    let mut policy: Box<dyn Policy> = match t {
        Tier::Base => Box::new(BasePolicy::new(object_count, target_activations)),
        Tier::Cg => Box::new(GraphPolicy::cg(object_count)),
        Tier::CgDb => Box::new(GraphPolicy::cg_db(object_count)),
    };
    let out = harness_run(&config, &Scaffolding::shipped(t), policy.as_mut(), &HeuristicEvaluator, &EpisodeOptions::default())
        .map_err(runtime_err)?;
    Ok(out.trace.to_json())
}

fn parse_traces(traces: Vec<String>, strict: bool) -> PyResult<Vec<EpisodeTrace>> {
    traces.iter().map(|t| EpisodeTrace::from_json(t, strict).map_err(value_err)).collect()
}

/// Category name for a trace given as JSON text.
#[pyfunction]
fn classify_episode(trace: &str) -> PyResult<&'static str> {
    let t = EpisodeTrace::from_json(trace, false).map_err(value_err)?;
    Ok(classify(&t).category.name())
}

/// Per-agent summaries for a list of JSON traces.
#[pyfunction]
fn summarize<'py>(py: Python<'py>, traces: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let traces = parse_traces(traces, false)?;
    to_py(py, &summarize_run(&traces).map_err(value_err)?)
}

/// Plain-text report for a list of JSON traces.
#[pyfunction]
fn report(traces: Vec<String>) -> PyResult<String> {
    let traces = parse_traces(traces, false)?;
    Ok(render_text(&analyze(&traces).map_err(value_err)?))
}

/// Execute a preset or a TOML plan into `out`; returns the episode count.
#[pyfunction]
#[pyo3(signature = (out, preset = None, plan_toml = None, workers = None))]
fn run_plan(out: PathBuf, preset: Option<&str>, plan_toml: Option<&str>, workers: Option<usize>) -> PyResult<usize> {
    let plan = match (preset, plan_toml) {
        (Some(name), None) => RunPlan::preset(name).ok_or_else(|| value_err(format!("unknown preset {name}")))?,
        (None, Some(text)) => RunPlan::from_toml(text).map_err(value_err)?,
        _ => return Err(value_err("pass exactly one of preset or plan_toml")),
    };
    let outcome = cmd_run(&plan, &out, &RunOptions { workers, ..Default::default() }).map_err(runtime_err)?;
    Ok(outcome.manifest.episode_count)
}

/// Analyze a stored run; returns the text report.
#[pyfunction]
#[pyo3(signature = (dir, strict = false))]
fn analyze_run(dir: PathBuf, strict: bool) -> PyResult<String> {
    let (analysis, _) = cmd_analyze(&dir, strict).map_err(runtime_err)?;
    Ok(render_text(&analysis))
}

/// Returns (passed, failing keys).
#[pyfunction]
#[pyo3(signature = (path = None))]
fn verify_stats(path: Option<PathBuf>) -> PyResult<(bool, Vec<String>)> {
    let (_, r) = cmd_verify_stats(path.as_deref()).map_err(runtime_err)?;
    Ok((r.passed(), r.failures.into_iter().map(|f| f.key).collect()))
}

// ---------------------------------------------------------------------------

#[pyfunction]
#[pyo3(signature = (a, b, c, d, alternative = "two-sided"))]
fn fisher_exact(a: u64, b: u64, c: u64, d: u64, alternative: &str) -> PyResult<f64> {
    let sided = match alternative {
        "two-sided" => Sided::TwoSided,
        "greater" => Sided::OneTailedGreater,
        other => return Err(value_err(format!("unknown alternative {other}"))),
    };
    stats::fisher_exact(&ContingencyTable::new(a, b, c, d), sided).map_err(value_err)
}

#[pyfunction]
fn cohens_h(p1: f64, p2: f64) -> PyResult<f64> {
    stats::cohens_h(p1, p2).map_err(value_err)
}

/// Returns (odds ratio, lower, upper).
#[pyfunction]
#[pyo3(signature = (a, b, c, d, level = 0.95))]
fn odds_ratio_ci(a: u64, b: u64, c: u64, d: u64, level: f64) -> PyResult<(f64, f64, f64)> {
    let r = stats::odds_ratio_ci(&ContingencyTable::new(a, b, c, d), level).map_err(value_err)?;
    Ok((r.odds_ratio, r.lower, r.upper))
}

/// Returns a dict with statistic, p_value, common_odds_ratio, lower, upper.
#[pyfunction]
#[pyo3(signature = (strata, level = 0.95))]
fn cmh<'py>(py: Python<'py>, strata: Vec<(u64, u64, u64, u64)>, level: f64) -> PyResult<Bound<'py, PyAny>> {
    let tables: Vec<ContingencyTable> = strata.into_iter().map(|(a, b, c, d)| ContingencyTable::new(a, b, c, d)).collect();
    to_py(py, &stats::cmh(&tables, level).map_err(value_err)?)
}

/// Posterior odds that rate 1 exceeds rate 2, with P(p1 > p2).
#[pyfunction]
#[pyo3(signature = (k1, n1, k2, n2, draws = stats::DEFAULT_DRAWS, seed = 0))]
fn bayes_factor<'py>(py: Python<'py>, k1: u64, n1: u64, k2: u64, n2: u64, draws: u64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let req = stats::BfRequest { draws, seed, ..stats::BfRequest::new(k1, n1, k2, n2) };
    to_py(py, &stats::bayes_factor(&req).map_err(value_err)?)
}

#[pymodule]
fn blicket(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnvironment>()?;
    m.add_class::<PyContextGraph>()?;
    m.add_function(wrap_pyfunction!(assign_roles, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(classify_episode, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(run_plan, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_run, m)?)?;
    m.add_function(wrap_pyfunction!(verify_stats, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_exact, m)?)?;
    m.add_function(wrap_pyfunction!(cohens_h, m)?)?;
    m.add_function(wrap_pyfunction!(odds_ratio_ci, m)?)?;
    m.add_function(wrap_pyfunction!(cmh, m)?)?;
    m.add_function(wrap_pyfunction!(bayes_factor, m)?)?;
    Ok(())
}
