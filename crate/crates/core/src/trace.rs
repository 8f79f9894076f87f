//! Episode trace schema, strict deserialization and validation.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::environment::{Action, Answer, EpisodeConfig, Observation, Verdict};
use crate::graph::ModificationRecord;
use crate::harness::{ParsedResponse, Tier};
use crate::monitor::{BehaviorId, Firing, TriggerEvaluation};
use crate::objects::ObjectId;

/// Current trace schema version. Readers accept any `1.x`.
pub const SCHEMA_VERSION: &str = "1.0";
pub const SCHEMA_MAJOR: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub target: String,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: u32,
    pub prompt_digest: String,
    pub parsed: ParsedResponse,
    /// Graph state in which the action was taken (after any transition).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cg_state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<TransitionRecord>,
    pub action: Action,
    pub observation: Observation,
    pub on_detector: Vec<ObjectId>,
    pub activations_so_far: u32,
    #[serde(default)]
    pub notifications_delivered: Vec<String>,
    #[serde(default)]
    pub monitor_evaluations: Vec<TriggerEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaffoldingSummary {
    pub tier: Tier,
    /// Label used to group episodes in reports; defaults to the tier name.
    pub agent: String,
    pub policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluator: Option<String>,
    #[serde(default)]
    pub behaviors: Vec<BehaviorId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub schema_version: String,
    pub episode_index: u32,
    pub config: EpisodeConfig,
    pub scaffolding: ScaffoldingSummary,
    pub steps: Vec<StepRecord>,
    #[serde(default)]
    pub firings: Vec<Firing>,
    #[serde(default)]
    pub modification_log: Vec<ModificationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub activation_count_final: u32,
    pub switched: bool,
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub parse_failures: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaViolation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "at {}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("schema violation {0}")]
    Schema(SchemaViolation),
    #[error("unsupported schema version {found} (expected {SCHEMA_MAJOR}.x)")]
    Version { found: String },
    #[error("trace invariant violated: {0}")]
    Invariant(String),
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> TraceError {
    TraceError::Schema(SchemaViolation { path: path.into(), message: message.into() })
}

/// Deserialization error at a path. For a missing field the path names the
/// field itself rather than its parent.
fn decode_violation<E: fmt::Display>(e: serde_path_to_error::Error<E>) -> TraceError {
    let mut path = e.path().to_string();
    let message = e.inner().to_string();
    if let Some(field) = message.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
        path = if path == "." || path.is_empty() { field.to_string() } else { format!("{path}.{field}") };
    }
    violation(path, message)
}

impl EpisodeTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Parse a trace document. In strict mode unknown fields are rejected;
    /// in both modes the version and invariants are checked.
    pub fn from_json(text: &str, strict: bool) -> Result<Self, TraceError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| violation("", e.to_string()))?;
        let version = value.get("schema_version").and_then(|v| v.as_str()).unwrap_or("");
        if version.split('.').next() != Some(SCHEMA_MAJOR) {
            return Err(TraceError::Version { found: version.to_string() });
        }
        let mut unknown: Option<String> = None;
        let trace: EpisodeTrace = if strict {
            let mut record = |p: serde_ignored::Path<'_>| {
                unknown.get_or_insert_with(|| p.to_string());
            };
            let de = serde_ignored::Deserializer::new(&value, &mut record);
            serde_path_to_error::deserialize(de).map_err(decode_violation)?
        } else {
            serde_path_to_error::deserialize(&value).map_err(decode_violation)?
        };
        if let Some(path) = unknown {
            return Err(violation(path, "unknown field"));
        }
        trace.validate()?;
        Ok(trace)
    }

    /// Cross-field invariants.
    pub fn validate(&self) -> Result<(), TraceError> {
        for (i, s) in self.steps.iter().enumerate() {
            if s.step_index != i as u32 + 1 {
                return Err(violation(format!("steps[{i}].step_index"), format!("expected {}, found {}", i + 1, s.step_index)));
            }
            let has_graph = self.scaffolding.tier.has_graph();
            if s.cg_state.is_some() != has_graph {
                return Err(violation(format!("steps[{i}].cg_state"), "present iff the tier has a context graph"));
            }
            if !self.scaffolding.tier.has_behaviors() && (!s.notifications_delivered.is_empty() || !s.monitor_evaluations.is_empty()) {
                return Err(violation(format!("steps[{i}]"), "monitor data on a tier without behaviors"));
            }
        }
        let fired: BTreeSet<(BehaviorId, u32)> = self
            .steps
            .iter()
            .flat_map(|s| s.monitor_evaluations.iter())
            .filter(|e| e.fired)
            .map(|e| (e.behavior_id, e.step))
            .collect();
        for (i, f) in self.firings.iter().enumerate() {
            if !fired.contains(&(f.behavior_id, f.step)) {
                return Err(violation(format!("firings[{i}]"), "firing has no matching fired evaluation"));
            }
        }
        let mut once = BTreeSet::new();
        for f in &self.firings {
            if !once.insert(f.behavior_id) {
                return Err(TraceError::Invariant(format!("{} fired more than once", f.behavior_id)));
            }
        }
        let checked = self.steps.iter().any(|s| matches!(s.action, Action::Check { .. }));
        if checked != self.final_answer.is_some() {
            return Err(violation("final_answer", "present iff some step's action is check"));
        }
        if self.verdict.is_some() && self.final_answer.is_none() {
            return Err(violation("verdict", "verdict without an answer"));
        }
        Ok(())
    }

    /// Step at which the activation count reached the switch point.
    pub fn switch_step(&self) -> Option<u32> {
        let n = self.config.switch_point?;
        if !self.switched {
            return None;
        }
        self.steps.iter().find(|s| s.activations_so_far >= n).map(|s| s.step_index)
    }

    /// Whether the detector was evaluated at least once after the switch.
    pub fn post_switch_observed(&self) -> bool {
        match self.switch_step() {
            Some(at) => self
                .steps
                .iter()
                .any(|s| s.step_index > at && !matches!(s.action, Action::Check { .. })),
            None => false,
        }
    }

    pub fn fired(&self, id: BehaviorId) -> bool {
        self.firings.iter().any(|f| f.behavior_id == id)
    }

    pub fn correct(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.correct)
    }
}
