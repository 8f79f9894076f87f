//! Dynamic behaviors: pre-screens, trigger scoring, competitive inhibition
//! and one-shot firing.
//!
//! Each completed step runs the pipeline once:
//!
//! 1. [`prescreen`] each behavior against the episode snapshot;
//! 2. score the survivors through a [`TriggerEvaluator`];
//! 3. [`resolve_firings`] picks the winner and at most one runner-up;
//! 4. [`MonitorState::fire`] applies the graph patch and returns the
//!    notification to inject into the next prompt.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::environment::Detector;
use crate::graph::{ContextGraph, GraphError, GraphModification};
use crate::objects::{ObjectId, ObjectSet};
use crate::prompt::Message;

pub const SHIPPED_BEHAVIORS: &str = include_str!("../config/behaviors.toml");

/// Messages kept in the condensed context.
pub const CONDENSED_MESSAGES: usize = 5;
/// Characters kept per condensed message.
pub const CONDENSED_CHARS: usize = 300;
/// Score assigned by the heuristic evaluator when its premise holds.
pub const HEURISTIC_HIT: f64 = 9.0;

const MARGIN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorId {
    ExplorationStagnation,
    OrderHypothesis,
    StochasticityHypothesis,
    RuleChangeHypothesis,
}

impl BehaviorId {
    /// Fixed id order, also used to break score ties.
    pub const ALL: [BehaviorId; 4] = [
        BehaviorId::ExplorationStagnation,
        BehaviorId::OrderHypothesis,
        BehaviorId::StochasticityHypothesis,
        BehaviorId::RuleChangeHypothesis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BehaviorId::ExplorationStagnation => "exploration_stagnation",
            BehaviorId::OrderHypothesis => "order_hypothesis",
            BehaviorId::StochasticityHypothesis => "stochasticity_hypothesis",
            BehaviorId::RuleChangeHypothesis => "rule_change_hypothesis",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            BehaviorId::ExplorationStagnation => "DB1",
            BehaviorId::OrderHypothesis => "DB2",
            BehaviorId::StochasticityHypothesis => "DB3",
            BehaviorId::RuleChangeHypothesis => "DB4",
        }
    }

    pub fn parse(s: &str) -> Option<BehaviorId> {
        let t = s.trim();
        BehaviorId::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(t) || b.short().eq_ignore_ascii_case(t))
    }
}

impl fmt::Display for BehaviorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorSpec {
    pub id: BehaviorId,
    pub min_steps: u32,
    #[serde(default)]
    pub requires_never_activated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stagnation_threshold: Option<u32>,
    #[serde(default = "default_threshold")]
    pub fire_threshold: f64,
    pub evaluation_prompt: String,
    pub notification: String,
    #[serde(default)]
    pub patch: GraphModification,
}

fn default_threshold() -> f64 {
    6.0
}

fn default_margin() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorSet {
    pub version: String,
    #[serde(default = "default_margin")]
    pub inhibition_margin: f64,
    pub evaluation_template: String,
    pub behaviors: Vec<BehaviorSpec>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MonitorError {
    #[error("behavior config: {0}")]
    Config(String),
    #[error("{0} has already fired in this episode")]
    AlreadyFired(BehaviorId),
    #[error("{0} is not configured")]
    UnknownBehavior(BehaviorId),
    #[error("graph patch for {behavior} failed: {source}")]
    Patch { behavior: BehaviorId, source: GraphError },
}

impl BehaviorSet {
    pub fn shipped() -> Self {
        Self::from_toml(SHIPPED_BEHAVIORS).expect("shipped behaviors are valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, MonitorError> {
        let mut set: BehaviorSet = toml::from_str(text).map_err(|e| MonitorError::Config(e.to_string()))?;
        if set.version.split('.').next() != Some("1") {
            return Err(MonitorError::Config(format!("unsupported version {}", set.version)));
        }
        let mut ids = BTreeSet::new();
        for b in &mut set.behaviors {
            if !ids.insert(b.id) {
                return Err(MonitorError::Config(format!("duplicate behavior {}", b.id)));
            }
            if !(0.0..=10.0).contains(&b.fire_threshold) {
                return Err(MonitorError::Config(format!("{} fire_threshold must lie in [0, 10]", b.id)));
            }
            if b.min_steps == 0 {
                return Err(MonitorError::Config(format!("{} min_steps must be positive", b.id)));
            }
            b.patch.source_behavior = b.id.name().to_string();
        }
        if set.inhibition_margin.is_nan() || set.inhibition_margin < 0.0 {
            return Err(MonitorError::Config("inhibition_margin must be non-negative".into()));
        }
        Ok(set)
    }

    pub fn spec(&self, id: BehaviorId) -> Option<&BehaviorSpec> {
        self.behaviors.iter().find(|b| b.id == id)
    }

    /// Evaluation prompt text for one behavior.
    pub fn evaluation_text(&self, spec: &BehaviorSpec, ctx: &CondensedContext) -> String {
        self.evaluation_template
            .trim_start_matches('\n')
            .replace("{condition}", &spec.evaluation_prompt)
            .replace("{current_state}", &ctx.current_state)
            .replace("{summary}", &ctx.exploration_summary)
            .replace("{recent_messages}", &ctx.recent_messages.join("\n"))
    }
}

// ---------------------------------------------------------------------------
// Exploration features

/// One detector evaluation: what was on the detector (in placement order)
/// and what it reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigEvaluation {
    pub step: u32,
    pub arrangement: Vec<ObjectId>,
    pub detector: Detector,
}

/// Structured history the pre-screens and the heuristic evaluator read.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationFeatures {
    pub steps_used: u32,
    pub activation_count: u32,
    pub last_activation_step: Option<u32>,
    pub evaluations: Vec<ConfigEvaluation>,
}

impl ExplorationFeatures {
    /// Record a consumed step. `evaluation` is `None` for steps that did not
    /// re-evaluate the detector.
    pub fn record(&mut self, step: u32, evaluation: Option<(Vec<ObjectId>, Detector)>) {
        self.steps_used = step;
        if let Some((arrangement, detector)) = evaluation {
            if detector.is_active() {
                self.activation_count += 1;
                self.last_activation_step = Some(step);
            }
            self.evaluations.push(ConfigEvaluation { step, arrangement, detector });
        }
    }

    pub fn steps_since_activation(&self) -> u32 {
        self.steps_used - self.last_activation_step.unwrap_or(0)
    }

    /// Outcome histories keyed by exact arrangement.
    fn by_arrangement(&self) -> BTreeMap<&[ObjectId], Vec<Detector>> {
        let mut m: BTreeMap<&[ObjectId], Vec<Detector>> = BTreeMap::new();
        for e in &self.evaluations {
            m.entry(e.arrangement.as_slice()).or_default().push(e.detector);
        }
        m
    }

    /// Plain-text summary used in trigger prompts.
    pub fn summary(&self) -> String {
        let mut per_config: Vec<(ObjectSet, u32, u32)> = Vec::new();
        for e in &self.evaluations {
            let set: ObjectSet = e.arrangement.iter().copied().collect();
            match per_config.iter_mut().find(|(s, _, _)| *s == set) {
                Some((_, n, a)) => {
                    *n += 1;
                    *a += e.detector.is_active() as u32;
                }
                None => per_config.push((set, 1, e.detector.is_active() as u32)),
            }
        }
        let last = match self.last_activation_step {
            Some(s) => format!("step {s} ({} steps ago)", self.steps_used - s),
            None => "never".to_string(),
        };
        let configs: Vec<String> = per_config
            .iter()
            .map(|(s, n, a)| format!("{s} {a}/{n} active"))
            .collect();
        format!(
            "{} steps used; {} unique configurations tested; {} total activations; last activation: {}; configurations: {}",
            self.steps_used,
            per_config.len(),
            self.activation_count,
            last,
            if configs.is_empty() { "none".to_string() } else { configs.join(", ") }
        )
    }
}

/// Snapshot the pre-screen needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snapshot {
    pub steps_used: u32,
    pub activation_count: u32,
    pub steps_since_activation: u32,
}

impl From<&ExplorationFeatures> for Snapshot {
    fn from(f: &ExplorationFeatures) -> Self {
        Snapshot {
            steps_used: f.steps_used,
            activation_count: f.activation_count,
            steps_since_activation: f.steps_since_activation(),
        }
    }
}

pub fn prescreen(spec: &BehaviorSpec, snap: Snapshot, fired: &BTreeSet<BehaviorId>) -> bool {
    snap.steps_used >= spec.min_steps
        && !fired.contains(&spec.id)
        && (!spec.requires_never_activated || snap.activation_count == 0)
        && spec.stagnation_threshold.is_none_or(|t| snap.steps_since_activation >= t)
}

// ---------------------------------------------------------------------------
// Condensed context and scoring

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensedContext {
    pub recent_messages: Vec<String>,
    pub current_state: String,
    pub exploration_summary: String,
    #[serde(skip)]
    pub features: ExplorationFeatures,
}

/// Keep the last five messages, each cut to 300 characters.
pub fn condense(history: &[Message], current_state: &str, features: &ExplorationFeatures) -> CondensedContext {
    let skip = history.len().saturating_sub(CONDENSED_MESSAGES);
    CondensedContext {
        recent_messages: history[skip..]
            .iter()
            .map(|m| m.content.chars().take(CONDENSED_CHARS).collect())
            .collect(),
        current_state: current_state.to_string(),
        exploration_summary: features.summary(),
        features: features.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvaluatorError {
    #[error("evaluator unavailable: {0}")]
    Unavailable(String),
    #[error("unparseable score: {0:?}")]
    Unparseable(String),
}

/// The single scoring seam.
pub trait TriggerEvaluator: Send + Sync {
    fn name(&self) -> String;
    fn score(&self, set: &BehaviorSet, spec: &BehaviorSpec, ctx: &CondensedContext) -> Result<f64, EvaluatorError>;
}

/// Parse an evaluator reply: the first token must be a number; finite
/// values are clamped to [0, 10].
pub fn parse_score(text: &str) -> Result<f64, EvaluatorError> {
    let token = text
        .split_whitespace()
        .next()
        .map(|t| t.trim_end_matches(['.', ',', ';', '/']))
        .unwrap_or("");
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v.clamp(0.0, 10.0)),
        _ => Err(EvaluatorError::Unparseable(text.chars().take(80).collect())),
    }
}

/// Deterministic stand-in for a model evaluator.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicEvaluator;

impl HeuristicEvaluator {
    pub fn evaluate(spec: &BehaviorSpec, f: &ExplorationFeatures) -> f64 {
        let hit = match spec.id {
            BehaviorId::ExplorationStagnation => {
                f.activation_count == 0 && f.steps_used >= spec.stagnation_threshold.unwrap_or(0)
            }
            BehaviorId::OrderHypothesis => order_contrast(f),
            BehaviorId::StochasticityHypothesis => f
                .by_arrangement()
                .values()
                .any(|h| h.iter().any(|d| d.is_active()) && h.iter().any(|d| !d.is_active())),
            BehaviorId::RuleChangeHypothesis => reliable_then_failed(f),
        };
        if hit { HEURISTIC_HIT } else { 0.0 }
    }
}

impl TriggerEvaluator for HeuristicEvaluator {
    fn name(&self) -> String {
        "heuristic".into()
    }

    fn score(&self, _set: &BehaviorSet, spec: &BehaviorSpec, ctx: &CondensedContext) -> Result<f64, EvaluatorError> {
        Ok(Self::evaluate(spec, &ctx.features))
    }
}

/// Two orderings of the same object set, each with a constant outcome, and
/// the two outcomes differ.
fn order_contrast(f: &ExplorationFeatures) -> bool {
    let mut by_set: BTreeMap<ObjectSet, Vec<Detector>> = BTreeMap::new();
    for (arrangement, history) in f.by_arrangement() {
        if arrangement.len() < 2 {
            continue;
        }
        let first = history[0];
        if history.iter().all(|&d| d == first) {
            by_set.entry(arrangement.iter().copied().collect()).or_default().push(first);
        }
    }
    by_set
        .values()
        .any(|outcomes| outcomes.contains(&Detector::Active) && outcomes.contains(&Detector::Inactive))
}

/// Some object set was active on at least two evaluations and inactive on a
/// later one.
fn reliable_then_failed(f: &ExplorationFeatures) -> bool {
    let mut active: BTreeMap<ObjectSet, u32> = BTreeMap::new();
    for e in &f.evaluations {
        let set: ObjectSet = e.arrangement.iter().copied().collect();
        match e.detector {
            Detector::Active => *active.entry(set).or_default() += 1,
            Detector::Inactive => {
                if active.get(&set).copied().unwrap_or(0) >= 2 {
                    return true;
                }
            }
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Inhibition and firing

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: BehaviorId,
    pub score: f64,
    pub threshold: f64,
}

/// Winner first, then the runner-up if it lies within `margin`.
pub fn resolve_firings(candidates: &[Candidate], margin: f64) -> Vec<BehaviorId> {
    let mut eligible: Vec<&Candidate> = candidates.iter().filter(|c| c.score >= c.threshold).collect();
    eligible.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    let mut out = Vec::new();
    if let Some(top) = eligible.first() {
        out.push(top.id);
        if let Some(next) = eligible.get(1) {
            if top.score - next.score <= margin + MARGIN_EPS {
                out.push(next.id);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvaluation {
    pub behavior_id: BehaviorId,
    pub step: u32,
    pub prescreen_passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub fired: bool,
    pub runner_up: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Firing {
    pub behavior_id: BehaviorId,
    pub step: u32,
    pub score: f64,
    pub runner_up: bool,
}

/// Per-episode monitor state.
#[derive(Debug, Clone)]
pub struct MonitorState {
    set: BehaviorSet,
    fired: BTreeSet<BehaviorId>,
    evaluations: Vec<TriggerEvaluation>,
    firings: Vec<Firing>,
}

impl MonitorState {
    pub fn new(set: BehaviorSet) -> Self {
        Self { set, fired: BTreeSet::new(), evaluations: Vec::new(), firings: Vec::new() }
    }

    pub fn behaviors(&self) -> &BehaviorSet {
        &self.set
    }

    pub fn fired_ids(&self) -> &BTreeSet<BehaviorId> {
        &self.fired
    }

    pub fn evaluations(&self) -> &[TriggerEvaluation] {
        &self.evaluations
    }

    pub fn firings(&self) -> &[Firing] {
        &self.firings
    }

    /// Pre-screen and score every behavior for `step`, then select which fire.
    /// Returns this step's evaluations (also appended to the log) with the
    /// `fired`/`runner_up` flags set; winners are not yet applied.
    pub fn evaluate_step(
        &mut self,
        evaluator: &dyn TriggerEvaluator,
        history: &[Message],
        current_state: &str,
        features: &ExplorationFeatures,
        step: u32,
    ) -> Vec<TriggerEvaluation> {
        let snap = Snapshot::from(features);
        let ctx = condense(history, current_state, features);
        let mut evals: Vec<TriggerEvaluation> = Vec::new();
        let mut candidates = Vec::new();
        for spec in &self.set.behaviors {
            let passed = prescreen(spec, snap, &self.fired);
            let (score, error) = if passed {
                match evaluator.score(&self.set, spec, &ctx) {
                    Ok(s) => (Some(s), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            } else {
                (None, None)
            };
            if let Some(s) = score {
                candidates.push(Candidate { id: spec.id, score: s, threshold: spec.fire_threshold });
            }
            evals.push(TriggerEvaluation {
                behavior_id: spec.id,
                step,
                prescreen_passed: passed,
                score,
                fired: false,
                runner_up: false,
                error,
            });
        }
        for (rank, id) in resolve_firings(&candidates, self.set.inhibition_margin).into_iter().enumerate() {
            if let Some(e) = evals.iter_mut().find(|e| e.behavior_id == id) {
                e.fired = true;
                e.runner_up = rank == 1;
            }
        }
        evals.sort_by_key(|e| e.behavior_id);
        self.evaluations.extend(evals.iter().cloned());
        evals
    }

    /// Apply a behavior's patch and return its notification text.
    pub fn fire(
        &mut self,
        id: BehaviorId,
        graph: &mut ContextGraph,
        step: u32,
        score: f64,
        runner_up: bool,
    ) -> Result<String, MonitorError> {
        if self.fired.contains(&id) {
            return Err(MonitorError::AlreadyFired(id));
        }
        let spec = self.set.spec(id).ok_or(MonitorError::UnknownBehavior(id))?;
        graph
            .apply_modification(&spec.patch, step)
            .map_err(|source| MonitorError::Patch { behavior: id, source })?;
        let note = spec.notification.clone();
        self.fired.insert(id);
        self.firings.push(Firing { behavior_id: id, step, score, runner_up });
        Ok(note)
    }

    /// Run the full pipeline for one step: evaluate, then fire the selected
    /// behaviors (winner's patch first). Returns the notifications.
    pub fn run_step(
        &mut self,
        evaluator: &dyn TriggerEvaluator,
        history: &[Message],
        graph: &mut ContextGraph,
        features: &ExplorationFeatures,
        step: u32,
    ) -> Result<Vec<String>, MonitorError> {
        let current = graph.current().to_string();
        let mut fired: Vec<TriggerEvaluation> = self
            .evaluate_step(evaluator, history, &current, features, step)
            .into_iter()
            .filter(|e| e.fired)
            .collect();
        fired.sort_by_key(|e| e.runner_up);
        let mut notes = Vec::new();
        for e in fired {
            notes.push(self.fire(e.behavior_id, graph, step, e.score.unwrap_or(0.0), e.runner_up)?);
        }
        Ok(notes)
    }
}
