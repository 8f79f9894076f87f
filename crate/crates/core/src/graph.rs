//! Context graphs: typed states, validated transitions and runtime patches.
//!
//! The graph is rendered into every prompt for the scaffolded tiers. The
//! rendering is fixed byte for byte so scripted policies can read their
//! position back out of it (see [`RenderedGraph::parse`]).

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

pub const BASE_GRAPH: &str = include_str!("../config/base_graph.toml");

/// How many modifications the rendering lists.
pub const RENDERED_MODIFICATIONS: usize = 3;

pub const MARKER: &str = "<-- YOU ARE HERE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateType {
    Action,
    Decision,
    Reflection,
}

impl StateType {
    pub fn label(self) -> &'static str {
        match self {
            StateType::Action => "action",
            StateType::Decision => "decision",
            StateType::Reflection => "reflection",
        }
    }

    fn parse(s: &str) -> Option<StateType> {
        match s {
            "action" => Some(StateType::Action),
            "decision" => Some(StateType::Decision),
            "reflection" => Some(StateType::Reflection),
            _ => None,
        }
    }
}

impl fmt::Display for StateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateNode {
    pub name: String,
    #[serde(rename = "type")]
    pub state_type: StateType,
    pub objective: String,
    #[serde(default)]
    pub guidelines: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub added_at_step: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionEdge {
    pub from: String,
    pub to: String,
    pub condition: String,
}

/// A runtime patch. `optional_edges` are connected as soon as both endpoints
/// exist, which lets a patch link to states that another patch adds later.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphModification {
    #[serde(default)]
    pub new_states: Vec<StateNode>,
    #[serde(default)]
    pub new_edges: Vec<TransitionEdge>,
    #[serde(default)]
    pub optional_edges: Vec<TransitionEdge>,
    #[serde(default)]
    pub source_behavior: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModificationRecord {
    pub step: u32,
    pub source_behavior: String,
    pub added_states: Vec<String>,
    pub added_edges: Vec<(String, String)>,
}

impl ModificationRecord {
    pub fn summary(&self) -> String {
        let states = if self.added_states.is_empty() {
            "no states".to_string()
        } else {
            self.added_states.join(", ")
        };
        format!(
            "step {}: {} added {} ({} edges)",
            self.step,
            self.source_behavior,
            states,
            self.added_edges.len()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// The target names no state in the graph.
    UnknownState,
    /// The target exists but there is no edge from the current state.
    NoEdge,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::UnknownState => "unknown_state",
            RejectReason::NoEdge => "no_edge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionOutcome {
    Accepted,
    Rejected(RejectReason),
}

impl TransitionOutcome {
    pub fn accepted(self) -> bool {
        self == TransitionOutcome::Accepted
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub step: u32,
    pub from: String,
    pub to: String,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("duplicate state name {0}")]
    DuplicateState(String),
    #[error("edge {from} -> {to} references a missing state")]
    DanglingEdge { from: String, to: String },
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: String, to: String },
    #[error("start state {0} is not defined")]
    UnknownStart(String),
    #[error("state {0} has an empty objective")]
    EmptyObjective(String),
    #[error("graph definition: {0}")]
    Parse(String),
}

/// Declarative graph definition, as loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDefinition {
    pub start: String,
    pub states: Vec<StateNode>,
    #[serde(default)]
    pub edges: Vec<TransitionEdge>,
}

impl GraphDefinition {
    pub fn from_toml(text: &str) -> Result<Self, GraphError> {
        toml::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))
    }

    pub fn shipped() -> Self {
        Self::from_toml(BASE_GRAPH).expect("shipped graph parses")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextGraph {
    states: Vec<StateNode>,
    edges: Vec<TransitionEdge>,
    start: String,
    current: String,
    modification_log: Vec<ModificationRecord>,
    transition_log: Vec<TransitionEvent>,
    pending_edges: Vec<TransitionEdge>,
}

/// The shipped four-state graph, positioned at its start state.
pub fn base_graph() -> ContextGraph {
    ContextGraph::from_definition(GraphDefinition::shipped()).expect("shipped graph is valid")
}

impl ContextGraph {
    pub fn from_definition(def: GraphDefinition) -> Result<Self, GraphError> {
        let mut g = ContextGraph {
            states: Vec::new(),
            edges: Vec::new(),
            start: def.start.clone(),
            current: def.start.clone(),
            modification_log: Vec::new(),
            transition_log: Vec::new(),
            pending_edges: Vec::new(),
        };
        for s in def.states {
            if g.has_state(&s.name) {
                return Err(GraphError::DuplicateState(s.name));
            }
            if s.objective.trim().is_empty() {
                return Err(GraphError::EmptyObjective(s.name));
            }
            g.states.push(s);
        }
        if !g.has_state(&def.start) {
            return Err(GraphError::UnknownStart(def.start));
        }
        for e in def.edges {
            g.check_edge(&e, &[])?;
            g.edges.push(e);
        }
        Ok(g)
    }

    pub fn from_toml(text: &str) -> Result<Self, GraphError> {
        Self::from_definition(GraphDefinition::from_toml(text)?)
    }

    pub fn states(&self) -> &[StateNode] {
        &self.states
    }

    pub fn edges(&self) -> &[TransitionEdge] {
        &self.edges
    }

    pub fn current(&self) -> &str {
        &self.current
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn modification_log(&self) -> &[ModificationRecord] {
        &self.modification_log
    }

    pub fn transition_log(&self) -> &[TransitionEvent] {
        &self.transition_log
    }

    pub fn pending_edges(&self) -> &[TransitionEdge] {
        &self.pending_edges
    }

    pub fn state(&self, name: &str) -> Option<&StateNode> {
        self.states.iter().find(|s| s.name == name)
    }

    pub fn has_state(&self, name: &str) -> bool {
        self.state(name).is_some()
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.iter().any(|e| e.from == from && e.to == to)
    }

    /// Outgoing edges of `name`, in insertion order.
    pub fn outgoing<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a TransitionEdge> + 'a {
        self.edges.iter().filter(move |e| e.from == name)
    }

    pub fn incoming<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a TransitionEdge> + 'a {
        self.edges.iter().filter(move |e| e.to == name)
    }

    /// Validate and, if legal, take a transition. Every call is logged.
    pub fn validate_transition(&mut self, target: &str, step: u32) -> TransitionOutcome {
        let outcome = if !self.has_state(target) {
            TransitionOutcome::Rejected(RejectReason::UnknownState)
        } else if !self.has_edge(&self.current, target) {
            TransitionOutcome::Rejected(RejectReason::NoEdge)
        } else {
            TransitionOutcome::Accepted
        };
        self.transition_log.push(TransitionEvent {
            step,
            from: self.current.clone(),
            to: target.to_string(),
            accepted: outcome.accepted(),
            reason: match outcome {
                TransitionOutcome::Accepted => None,
                TransitionOutcome::Rejected(r) => Some(r),
            },
        });
        if outcome.accepted() {
            self.current = target.to_string();
        }
        outcome
    }

    fn check_edge(&self, e: &TransitionEdge, extra: &[StateNode]) -> Result<(), GraphError> {
        let exists = |n: &str| self.has_state(n) || extra.iter().any(|s| s.name == n);
        if !exists(&e.from) || !exists(&e.to) {
            return Err(GraphError::DanglingEdge { from: e.from.clone(), to: e.to.clone() });
        }
        if self.has_edge(&e.from, &e.to) {
            return Err(GraphError::DuplicateEdge { from: e.from.clone(), to: e.to.clone() });
        }
        Ok(())
    }

    /// Whether a modification from `behavior` has already been applied.
    pub fn applied(&self, behavior: &str) -> bool {
        !behavior.is_empty() && self.modification_log.iter().any(|m| m.source_behavior == behavior)
    }

    /// Apply a patch atomically. States and edges are only ever appended;
    /// the current state is unchanged. A second patch from the same source
    /// behavior is ignored, returning `Ok(false)`.
    pub fn apply_modification(&mut self, m: &GraphModification, step: u32) -> Result<bool, GraphError> {
        if self.applied(&m.source_behavior) {
            return Ok(false);
        }
        let mut seen = BTreeSet::new();
        for s in &m.new_states {
            if self.has_state(&s.name) || !seen.insert(s.name.as_str()) {
                return Err(GraphError::DuplicateState(s.name.clone()));
            }
            if s.objective.trim().is_empty() {
                return Err(GraphError::EmptyObjective(s.name.clone()));
            }
        }
        let mut pairs = BTreeSet::new();
        for e in &m.new_edges {
            self.check_edge(e, &m.new_states)?;
            if !pairs.insert((e.from.as_str(), e.to.as_str())) {
                return Err(GraphError::DuplicateEdge { from: e.from.clone(), to: e.to.clone() });
            }
        }

        let mut record = ModificationRecord {
            step,
            source_behavior: m.source_behavior.clone(),
            added_states: Vec::new(),
            added_edges: Vec::new(),
        };
        for s in &m.new_states {
            let mut s = s.clone();
            s.added_at_step = Some(step);
            record.added_states.push(s.name.clone());
            self.states.push(s);
        }
        for e in &m.new_edges {
            record.added_edges.push((e.from.clone(), e.to.clone()));
            self.edges.push(e.clone());
        }
        self.pending_edges.extend(m.optional_edges.iter().cloned());
        let pending = std::mem::take(&mut self.pending_edges);
        for e in pending {
            if self.has_state(&e.from) && self.has_state(&e.to) {
                if !self.has_edge(&e.from, &e.to) {
                    record.added_edges.push((e.from.clone(), e.to.clone()));
                    self.edges.push(e);
                }
            } else {
                self.pending_edges.push(e);
            }
        }
        self.modification_log.push(record);
        Ok(true)
    }

    /// States reachable from the start state.
    pub fn reachable_from_start(&self) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([self.start.clone()]);
        while let Some(n) = queue.pop_front() {
            if seen.insert(n.clone()) {
                for e in self.outgoing(&n) {
                    queue.push_back(e.to.clone());
                }
            }
        }
        seen
    }

    /// Every violated structural invariant. Empty when the graph is sound.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut names = BTreeSet::new();
        for s in &self.states {
            if !names.insert(s.name.as_str()) {
                v.push(format!("duplicate state {}", s.name));
            }
            if s.objective.trim().is_empty() {
                v.push(format!("state {} has an empty objective", s.name));
            }
            if s.added_at_step.is_some() && (self.incoming(&s.name).next().is_none() || self.outgoing(&s.name).next().is_none()) {
                v.push(format!("dynamic state {} lacks an incoming or outgoing edge", s.name));
            }
        }
        let mut pairs = BTreeSet::new();
        for e in &self.edges {
            if !names.contains(e.from.as_str()) || !names.contains(e.to.as_str()) {
                v.push(format!("dangling edge {} -> {}", e.from, e.to));
            }
            if !pairs.insert((e.from.as_str(), e.to.as_str())) {
                v.push(format!("duplicate edge {} -> {}", e.from, e.to));
            }
        }
        if !names.contains(self.current.as_str()) {
            v.push(format!("current state {} does not exist", self.current));
        } else if !self.reachable_from_start().contains(&self.current) {
            v.push(format!("current state {} is unreachable from {}", self.current, self.start));
        }
        v
    }

    /// Render the three prompt layers: current state, overview, and recent
    /// modifications (only once something has been modified).
    pub fn render(&self) -> String {
        let mut out = String::from("=== Context Graph ===\n");
        if let Some(cur) = self.state(&self.current) {
            out.push_str(&format!("Current State: {} [{}]\n", cur.name, cur.state_type));
            out.push_str(&format!("Objective: {}\n", cur.objective));
            out.push_str("Guidelines:\n");
            for g in &cur.guidelines {
                out.push_str(&format!("  - {g}\n"));
            }
            out.push_str("Transitions:\n");
            for e in self.outgoing(&cur.name) {
                out.push_str(&format!("  -> {}: {}\n", e.to, e.condition));
            }
        }
        out.push_str("\nGraph overview:\n");
        for s in &self.states {
            let targets: Vec<&str> = self.outgoing(&s.name).map(|e| e.to.as_str()).collect();
            let mut line = format!("  [{}] {}", s.state_type, s.name);
            if !targets.is_empty() {
                line.push_str(" -> ");
                line.push_str(&targets.join(", "));
            }
            if s.name == self.current {
                line.push(' ');
                line.push_str(MARKER);
            }
            out.push_str(&line);
            out.push('\n');
        }
        if !self.modification_log.is_empty() {
            out.push_str("\nRecent modifications:\n");
            let skip = self.modification_log.len().saturating_sub(RENDERED_MODIFICATIONS);
            for m in &self.modification_log[skip..] {
                out.push_str(&format!("  - {}\n", m.summary()));
            }
        }
        out
    }
}

/// A rendering read back into structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedGraph {
    pub current: String,
    /// (name, type, outgoing targets) per overview line, in order.
    pub overview: Vec<(String, StateType, Vec<String>)>,
}

impl RenderedGraph {
    /// Parse the text produced by [`ContextGraph::render`], possibly embedded
    /// in a larger prompt. Returns `None` when no rendering is present.
    pub fn parse(text: &str) -> Option<RenderedGraph> {
        let start = text.find("=== Context Graph ===")?;
        let body = &text[start..];
        let current = body
            .lines()
            .find_map(|l| l.strip_prefix("Current State: "))
            .and_then(|rest| rest.split_whitespace().next())?
            .to_string();
        let mut overview = Vec::new();
        let mut in_overview = false;
        for line in body.lines() {
            if line == "Graph overview:" {
                in_overview = true;
                continue;
            }
            if !in_overview {
                continue;
            }
            let Some(rest) = line.strip_prefix("  [") else { break };
            let (ty, rest) = rest.split_once("] ")?;
            let rest = rest.trim_end_matches(MARKER).trim_end();
            let (name, targets) = match rest.split_once(" -> ") {
                Some((n, t)) => (n, t.split(", ").map(str::to_string).collect()),
                None => (rest, Vec::new()),
            };
            overview.push((name.to_string(), StateType::parse(ty)?, targets));
        }
        Some(RenderedGraph { current, overview })
    }

    pub fn targets(&self, name: &str) -> &[String] {
        self.overview
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, t)| t.as_slice())
            .unwrap_or(&[])
    }

    /// Shortest path of transitions from the current state to `goal`
    /// (excluding the current state). `None` if unreachable.
    pub fn path_to(&self, goal: &str) -> Option<Vec<String>> {
        if self.current == goal {
            return Some(Vec::new());
        }
        let mut prev: Vec<(String, String)> = Vec::new();
        let mut seen = BTreeSet::from([self.current.clone()]);
        let mut queue = VecDeque::from([self.current.clone()]);
        while let Some(n) = queue.pop_front() {
            for t in self.targets(&n) {
                if seen.insert(t.clone()) {
                    prev.push((t.clone(), n.clone()));
                    if t == goal {
                        let mut path = vec![t.clone()];
                        let mut at = n.clone();
                        while at != self.current {
                            path.push(at.clone());
                            at = prev.iter().find(|(c, _)| *c == at).map(|(_, p)| p.clone())?;
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(t.clone());
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str, t: StateType) -> StateNode {
        StateNode {
            name: name.into(),
            state_type: t,
            objective: "objective".into(),
            guidelines: vec![],
            added_at_step: None,
        }
    }

    fn edge(from: &str, to: &str) -> TransitionEdge {
        TransitionEdge { from: from.into(), to: to.into(), condition: "c".into() }
    }

    #[test]
    fn base_graph_shape() {
        let g = base_graph();
        assert_eq!(g.states().len(), 4);
        assert_eq!(g.edges().len(), 6);
        assert_eq!(g.current(), "INITIAL_EXPLORATION");
        assert!(g.has_edge("INITIAL_EXPLORATION", "COMBINATION_TESTING"));
        assert!(g.has_edge("VERIFICATION", "HYPOTHESIS_EVALUATION"));
        assert_eq!(g.state("HYPOTHESIS_EVALUATION").unwrap().state_type, StateType::Reflection);
        assert_eq!(g.state("VERIFICATION").unwrap().state_type, StateType::Decision);
        assert!(g.violations().is_empty());
    }

    #[test]
    fn transitions_are_validated_and_logged() {
        let mut g = base_graph();
        assert_eq!(g.validate_transition("VERIFICATION", 1), TransitionOutcome::Rejected(RejectReason::NoEdge));
        assert_eq!(g.validate_transition("NOWHERE", 2), TransitionOutcome::Rejected(RejectReason::UnknownState));
        assert_eq!(g.validate_transition("COMBINATION_TESTING", 3), TransitionOutcome::Accepted);
        assert_eq!(g.current(), "COMBINATION_TESTING");
        assert_eq!(g.transition_log().len(), 3);
        assert_eq!(g.transition_log()[1].reason, Some(RejectReason::UnknownState));
    }

    #[test]
    fn empty_modification_logs_without_changes() {
        let mut g = base_graph();
        let before = (g.states().to_vec(), g.edges().to_vec());
        let m = GraphModification { source_behavior: "x".into(), ..Default::default() };
        assert!(g.apply_modification(&m, 4).unwrap());
        assert_eq!((g.states().to_vec(), g.edges().to_vec()), before);
        assert_eq!(g.modification_log().len(), 1);
        // idempotent per behavior
        assert!(!g.apply_modification(&m, 5).unwrap());
        assert_eq!(g.modification_log().len(), 1);
    }

    #[test]
    fn modification_errors() {
        let mut g = base_graph();
        let dup = GraphModification {
            new_states: vec![node("VERIFICATION", StateType::Action)],
            source_behavior: "a".into(),
            ..Default::default()
        };
        assert_eq!(g.apply_modification(&dup, 1), Err(GraphError::DuplicateState("VERIFICATION".into())));
        let dangling = GraphModification {
            new_states: vec![node("NEW", StateType::Action)],
            new_edges: vec![edge("NEW", "MISSING")],
            source_behavior: "b".into(),
            ..Default::default()
        };
        assert!(matches!(g.apply_modification(&dangling, 1), Err(GraphError::DanglingEdge { .. })));
        // failed patches leave the graph untouched
        assert_eq!(g.states().len(), 4);
        assert!(g.modification_log().is_empty());
    }

    #[test]
    fn optional_edges_wait_for_their_endpoints() {
        let mut g = base_graph();
        let later = GraphModification {
            new_states: vec![node("LATER", StateType::Action)],
            new_edges: vec![edge("COMBINATION_TESTING", "LATER"), edge("LATER", "VERIFICATION")],
            optional_edges: vec![edge("HUB", "LATER")],
            source_behavior: "later".into(),
        };
        g.apply_modification(&later, 3).unwrap();
        assert_eq!(g.pending_edges().len(), 1);
        let hub = GraphModification {
            new_states: vec![node("HUB", StateType::Reflection)],
            new_edges: vec![edge("VERIFICATION", "HUB"), edge("HUB", "VERIFICATION")],
            source_behavior: "hub".into(),
            ..Default::default()
        };
        g.apply_modification(&hub, 5).unwrap();
        assert!(g.pending_edges().is_empty());
        assert!(g.has_edge("HUB", "LATER"));
        assert!(g.violations().is_empty());
    }

    #[test]
    fn render_is_deterministic_and_parses_back() {
        let mut g = base_graph();
        g.validate_transition("COMBINATION_TESTING", 1);
        let text = g.render();
        assert_eq!(text, g.render());
        assert!(text.contains(
            "  [action] COMBINATION_TESTING -> HYPOTHESIS_EVALUATION, INITIAL_EXPLORATION <-- YOU ARE HERE\n"
        ));
        assert!(!text.contains("Recent modifications"));
        let parsed = RenderedGraph::parse(&format!("preamble\n{text}")).unwrap();
        assert_eq!(parsed.current, "COMBINATION_TESTING");
        assert_eq!(parsed.overview.len(), 4);
        assert_eq!(parsed.path_to("VERIFICATION").unwrap(), vec!["HYPOTHESIS_EVALUATION", "VERIFICATION"]);
        assert_eq!(parsed.path_to("COMBINATION_TESTING").unwrap(), Vec::<String>::new());
    }

    #[test]
    fn render_lists_last_three_modifications() {
        let mut g = base_graph();
        for (i, b) in ["a", "b", "c", "d"].iter().enumerate() {
            let m = GraphModification { source_behavior: b.to_string(), ..Default::default() };
            g.apply_modification(&m, i as u32 + 1).unwrap();
        }
        let text = g.render();
        let section = text.split("Recent modifications:\n").nth(1).unwrap();
        assert_eq!(section.lines().count(), 3);
        assert!(!section.contains(" a added"));
        assert!(section.contains("step 4: d added no states"));
    }

    #[test]
    fn definition_rejects_bad_graphs() {
        let mut def = GraphDefinition::shipped();
        def.start = "ELSEWHERE".into();
        assert_eq!(ContextGraph::from_definition(def).unwrap_err(), GraphError::UnknownStart("ELSEWHERE".into()));
        let mut def = GraphDefinition::shipped();
        def.edges.push(def.edges[0].clone());
        assert!(matches!(ContextGraph::from_definition(def), Err(GraphError::DuplicateEdge { .. })));
    }
}
