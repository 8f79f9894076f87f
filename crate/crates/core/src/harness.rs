//! The agent–environment loop for the three scaffolding tiers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::environment::{Action, Answer, EnvError, EnvState, EpisodeConfig, Observation, RuleType};
use crate::graph::{ContextGraph, GraphDefinition, GraphError, TransitionOutcome};
use crate::monitor::{BehaviorSet, ExplorationFeatures, MonitorError, MonitorState, TriggerEvaluator};
use crate::objects::{ObjectId, ObjectSet};
use crate::prompt::{action_menu, task_description, MenuAction, Message, PromptContext, Role};
use crate::trace::{EpisodeTrace, ScaffoldingSummary, StepRecord, TransitionRecord, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Base,
    Cg,
    CgDb,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Base, Tier::Cg, Tier::CgDb];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Base => "base",
            Tier::Cg => "cg",
            Tier::CgDb => "cg_db",
        }
    }

    pub fn parse(s: &str) -> Option<Tier> {
        let t = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        match t.as_str() {
            "base" | "base_llm" => Some(Tier::Base),
            "cg" | "cg_only" => Some(Tier::Cg),
            "cg_db" | "full_cg_db" => Some(Tier::CgDb),
            _ => None,
        }
    }

    pub fn has_graph(self) -> bool {
        self != Tier::Base
    }

    pub fn has_behaviors(self) -> bool {
        self == Tier::CgDb
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// Response parsing

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_request: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    pub parse_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ParsedResponse {
    fn failure(reasoning: String, error: impl Into<String>) -> Self {
        ParsedResponse { reasoning, transition_request: None, action: None, parse_ok: false, error: Some(error.into()) }
    }

    pub fn answer(&self) -> Option<&Answer> {
        match &self.action {
            Some(Action::Check { answer }) => Some(answer),
            _ => None,
        }
    }
}

/// Parse a policy reply. Keys are case-insensitive and the first occurrence
/// of each key wins. An `ACTION:` line is required; a check additionally
/// needs `RULE_TYPE:` and `BLICKETS:` lines.
pub fn parse_response(text: &str, object_count: u8) -> ParsedResponse {
    let mut fields: [Option<String>; 5] = Default::default();
    const KEYS: [&str; 5] = ["REASONING", "TRANSITION", "ACTION", "RULE_TYPE", "BLICKETS"];
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['*', '-', '#', ' ']);
        let Some((key, value)) = line.split_once(':') else { continue };
        let key = key.trim().trim_matches('*').to_ascii_uppercase().replace(' ', "_");
        if let Some(i) = KEYS.iter().position(|k| *k == key) {
            if fields[i].is_none() {
                fields[i] = Some(value.trim().trim_matches('*').trim().to_string());
            }
        }
    }
    let [reasoning, transition, action, rule_type, blickets] = fields;
    let reasoning = reasoning.unwrap_or_default();
    let Some(action_text) = action else {
        return ParsedResponse::failure(reasoning, "missing ACTION line");
    };
    let Some(menu_action) = parse_action(&action_text, object_count) else {
        return ParsedResponse::failure(reasoning, format!("unrecognized action {action_text:?}"));
    };
    let action = match menu_action {
        MenuAction::Place(o) => Action::Place { object: o },
        MenuAction::Remove(o) => Action::Remove { object: o },
        MenuAction::Check => {
            let rule = rule_type.as_deref().and_then(|r| r.split_whitespace().next()).and_then(RuleType::parse);
            let set = blickets.as_deref().and_then(|b| b.parse::<ObjectSet>().ok());
            match (rule, set) {
                (Some(rule_type), Some(claimed)) if claimed.is_subset(ObjectSet::universe(object_count)) => {
                    Action::Check { answer: Answer { rule_type, claimed_blickets: claimed } }
                }
                _ => return ParsedResponse::failure(reasoning, "check without a valid RULE_TYPE and BLICKETS"),
            }
        }
    };
    let transition_request = transition
        .and_then(|t| t.split_whitespace().next().map(|s| s.trim_matches(['.', ',', '`']).to_ascii_uppercase()))
        .filter(|t| !t.is_empty());
    ParsedResponse { reasoning, transition_request, action: Some(action), parse_ok: true, error: None }
}

fn parse_action(text: &str, object_count: u8) -> Option<MenuAction> {
    let menu = action_menu(object_count);
    let t = text.trim();
    let digits: String = t.chars().take_while(|c| c.is_ascii_digit()).collect();
    if !digits.is_empty() {
        let n: usize = digits.parse().ok()?;
        return n.checked_sub(1).and_then(|i| menu.get(i).copied());
    }
    let lower = t.to_ascii_lowercase();
    let mut words = lower.split_whitespace();
    let verb = words.next()?.trim_matches(['.', ',']);
    let object = || -> Option<ObjectId> {
        let id: ObjectId = lower.split_whitespace().nth(1)?.trim_matches(['.', ',', '(', ')']).parse().ok()?;
        (id.index() < object_count).then_some(id)
    };
    match verb {
        "place" => object().map(MenuAction::Place),
        "remove" => object().map(MenuAction::Remove),
        "check" | "submit" => Some(MenuAction::Check),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Policies

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("policy timed out: {0}")]
    Timeout(String),
    #[error("policy transport error: {0}")]
    Transport(String),
    #[error("policy failed: {0}")]
    Failed(String),
}

/// Anything that turns a prompt into response text.
pub trait Policy {
    fn name(&self) -> String;
    fn decide(&mut self, ctx: &PromptContext) -> Result<String, PolicyError>;
}

// ---------------------------------------------------------------------------
// Scaffolding and the episode loop

#[derive(Debug, Clone, PartialEq)]
pub struct Scaffolding {
    pub tier: Tier,
    pub agent: String,
    pub graph: Option<GraphDefinition>,
    pub behaviors: Option<BehaviorSet>,
}

impl Scaffolding {
    /// The tier with shipped graph and behavior definitions.
    pub fn shipped(tier: Tier) -> Self {
        Scaffolding {
            tier,
            agent: tier.name().to_string(),
            graph: tier.has_graph().then(GraphDefinition::shipped),
            behaviors: tier.has_behaviors().then(BehaviorSet::shipped),
        }
    }

    pub fn with_agent(mut self, agent: impl Into<String>) -> Self {
        self.agent = agent.into();
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.graph.is_some() != self.tier.has_graph() {
            v.push(format!("tier {} {} a context graph", self.tier, if self.tier.has_graph() { "requires" } else { "must not have" }));
        }
        if self.behaviors.is_some() != self.tier.has_behaviors() {
            v.push(format!("tier {} {} dynamic behaviors", self.tier, if self.tier.has_behaviors() { "requires" } else { "must not have" }));
        }
        v
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("invalid scaffolding: {0}")]
    Scaffolding(String),
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeOptions {
    pub episode_index: u32,
    /// Keep the full prompt text of every step.
    pub keep_prompts: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub trace: EpisodeTrace,
    pub prompts: Option<Vec<String>>,
}

fn intro_message(config: &EpisodeConfig) -> String {
    format!("The detector is empty and inactive. You have {} steps.", config.step_budget)
}

fn list(ids: &[ObjectId]) -> String {
    if ids.is_empty() {
        "nothing".to_string()
    } else {
        ids.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(", ")
    }
}

fn observation_message(step: u32, parsed: &ParsedResponse, action: &Action, obs: &Observation, on: &[ObjectId]) -> String {
    let mut out = format!("Step {step}: ");
    match action {
        Action::Check { .. } => {
            out.push_str("answer submitted. The episode is over.");
            return out;
        }
        Action::Noop if !parsed.parse_ok => {
            out.push_str("no valid ACTION line was found; the step was used without an action. ");
        }
        _ => out.push_str(&format!("{action}. ")),
    }
    out.push_str(&format!(
        "Detector: {}. On the detector: {}. Steps remaining: {}.",
        obs.detector,
        list(on),
        obs.steps_remaining
    ));
    out
}

/// Run one episode to termination (check or budget exhaustion) or until the
/// policy fails, in which case the trace is marked aborted.
pub fn run_episode(
    config: &EpisodeConfig,
    scaffolding: &Scaffolding,
    policy: &mut dyn Policy,
    evaluator: &dyn TriggerEvaluator,
    options: &EpisodeOptions,
) -> Result<EpisodeOutput, HarnessError> {
    let problems = scaffolding.violations();
    if !problems.is_empty() {
        return Err(HarnessError::Scaffolding(problems.join("; ")));
    }
    let mut env = EnvState::new(config.clone())?;
    let mut graph = match &scaffolding.graph {
        Some(def) => Some(ContextGraph::from_definition(def.clone())?),
        None => None,
    };
    let mut monitor = scaffolding.behaviors.clone().map(MonitorState::new);
    let menu: Vec<String> = action_menu(config.object_count).iter().map(|a| a.to_string()).collect();
    let description = task_description(config.object_count);

    let mut history = vec![Message::new(Role::User, intro_message(config))];
    let mut features = ExplorationFeatures::default();
    let mut pending: Vec<String> = Vec::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut prompts = options.keep_prompts.then(Vec::new);
    let mut last_observation: Option<Observation> = None;
    let mut parse_failures = 0;
    let mut abort_reason = None;

    while !env.terminated() {
        let step = env.steps_used() + 1;
        let delivered = std::mem::take(&mut pending);
        for n in &delivered {
            history.push(Message::new(Role::System, n.clone()));
        }
        let ctx = PromptContext {
            task_description: description.clone(),
            graph_rendering: graph.as_ref().map(|g| g.render()),
            pending_notifications: delivered.clone(),
            history: history.clone(),
            available_actions: menu.clone(),
            step,
            steps_remaining: env.steps_remaining(),
            object_count: config.object_count,
            on_detector: env.on_detector(),
            last_observation,
        };
        if let Some(p) = prompts.as_mut() {
            p.push(ctx.full_text());
        }
        let digest = ctx.digest();
        let response = match policy.decide(&ctx) {
            Ok(r) => r,
            Err(e) => {
                abort_reason = Some(e.to_string());
                break;
            }
        };
        history.push(Message::new(Role::Assistant, response.clone()));
        let parsed = parse_response(&response, config.object_count);
        if !parsed.parse_ok {
            parse_failures += 1;
        }

        // A transition request is applied before the action.
        let transition = parsed.transition_request.as_ref().map(|target| match graph.as_mut() {
            Some(g) => {
                let outcome = g.validate_transition(target, step);
                TransitionRecord {
                    target: target.clone(),
                    accepted: outcome.accepted(),
                    reason: match outcome {
                        TransitionOutcome::Accepted => None,
                        TransitionOutcome::Rejected(r) => Some(r.to_string()),
                    },
                }
            }
            None => TransitionRecord { target: target.clone(), accepted: false, reason: Some("no_context_graph".into()) },
        });

        let action = parsed.action.clone().unwrap_or(Action::Noop);
        let obs = env.step(&action)?;
        last_observation = Some(obs);
        let on_detector = env.on_detector();
        let evaluated = !matches!(action, Action::Check { .. });
        features.record(step, evaluated.then(|| (on_detector.clone(), obs.detector)));
        history.push(Message::new(Role::User, observation_message(step, &parsed, &action, &obs, &on_detector)));

        // Monitors run after every completed step that leaves the episode open.
        let mut evaluations = Vec::new();
        if let (Some(m), Some(g)) = (monitor.as_mut(), graph.as_mut()) {
            if !env.terminated() {
                let before = m.evaluations().len();
                pending.extend(m.run_step(evaluator, &history, g, &features, step)?);
                evaluations = m.evaluations()[before..].to_vec();
            }
        }

        steps.push(StepRecord {
            step_index: step,
            prompt_digest: digest,
            parsed,
            cg_state: graph.as_ref().map(|g| g.current().to_string()),
            transition,
            action,
            observation: obs,
            on_detector,
            activations_so_far: env.activation_count(),
            notifications_delivered: delivered,
            monitor_evaluations: evaluations,
        });
    }

    let trace = EpisodeTrace {
        schema_version: SCHEMA_VERSION.to_string(),
        episode_index: options.episode_index,
        config: config.clone(),
        scaffolding: ScaffoldingSummary {
            tier: scaffolding.tier,
            agent: scaffolding.agent.clone(),
            policy: policy.name(),
            evaluator: monitor.as_ref().map(|_| evaluator.name()),
            behaviors: scaffolding
                .behaviors
                .as_ref()
                .map(|b| b.behaviors.iter().map(|s| s.id).collect())
                .unwrap_or_default(),
        },
        steps,
        firings: monitor.as_ref().map(|m| m.firings().to_vec()).unwrap_or_default(),
        modification_log: graph.as_ref().map(|g| g.modification_log().to_vec()).unwrap_or_default(),
        final_answer: env.answer().cloned(),
        verdict: env.verdict().cloned(),
        activation_count_final: env.activation_count(),
        switched: env.switched(),
        aborted: abort_reason.is_some(),
        abort_reason,
        parse_failures,
    };
    Ok(EpisodeOutput { trace, prompts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{Condition, PostSwitchRule};
    use crate::monitor::HeuristicEvaluator;

    fn set(s: &str) -> ObjectSet {
        s.parse().unwrap()
    }

    #[test]
    fn parse_examples() {
        let p = parse_response("REASONING: try A\nACTION: place A", 5);
        assert!(p.parse_ok);
        assert_eq!(p.action, Some(Action::Place { object: "A".parse().unwrap() }));
        assert_eq!(p.reasoning, "try A");

        let p = parse_response("TRANSITION: HYPOTHESIS_EVALUATION\nACTION: check\nRULE_TYPE: disjunctive\nBLICKETS: C", 5);
        assert_eq!(p.transition_request.as_deref(), Some("HYPOTHESIS_EVALUATION"));
        assert_eq!(p.answer().unwrap(), &Answer { rule_type: RuleType::Disjunctive, claimed_blickets: set("C") });

        let p = parse_response("I think B is a blicket", 5);
        assert!(!p.parse_ok && p.action.is_none() && p.transition_request.is_none());
    }

    #[test]
    fn parse_menu_numbers_and_edge_cases() {
        assert_eq!(parse_response("ACTION: 7", 5).action, Some(Action::Remove { object: "B".parse().unwrap() }));
        // check without RULE_TYPE and BLICKETS
        assert!(!parse_response("ACTION: 11", 5).parse_ok);
        assert!(!parse_response("ACTION: 12", 5).parse_ok);
        assert!(!parse_response("ACTION: place E", 3).parse_ok);
        assert!(!parse_response("TRANSITION: VERIFICATION", 5).parse_ok);
        let p = parse_response("ACTION: place A\nACTION: place B", 5);
        assert_eq!(p.action, Some(Action::Place { object: "A".parse().unwrap() }));
        let p = parse_response("action: CHECK\nrule_type: Conjunctive\nblickets: {A, B}", 5);
        assert_eq!(p.answer().unwrap().claimed_blickets, set("AB"));
    }

    struct Scripted(Vec<&'static str>, usize);

    impl Policy for Scripted {
        fn name(&self) -> String {
            "fixed".into()
        }
        fn decide(&mut self, _ctx: &PromptContext) -> Result<String, PolicyError> {
            let r = self.0.get(self.1).copied().unwrap_or("nonsense");
            self.1 += 1;
            Ok(r.to_string())
        }
    }

    fn moderator_config() -> EpisodeConfig {
        EpisodeConfig {
            condition: Condition::HiddenModerator,
            object_count: 5,
            blickets: set("AB"),
            distractors: set("CDE"),
            order_constraint: None,
            activation_probability: None,
            switch_point: Some(3),
            post_switch_rule: Some(PostSwitchRule { rule_type: RuleType::Disjunctive, blickets: set("C") }),
            step_budget: 12,
            seed: 1,
        }
    }

    #[test]
    fn garbage_policy_exhausts_budget() {
        let cfg = moderator_config();
        let mut p = Scripted(vec![], 0);
        let out = run_episode(&cfg, &Scaffolding::shipped(Tier::Base), &mut p, &HeuristicEvaluator, &EpisodeOptions::default()).unwrap();
        assert_eq!(out.trace.steps.len(), 12);
        assert_eq!(out.trace.parse_failures, 12);
        assert!(out.trace.final_answer.is_none());
        out.trace.validate().unwrap();
    }

    #[test]
    fn base_tier_logs_transition_requests_without_a_graph() {
        let cfg = moderator_config();
        let mut p = Scripted(vec!["TRANSITION: VERIFICATION\nACTION: place A"], 0);
        let out = run_episode(&cfg, &Scaffolding::shipped(Tier::Base), &mut p, &HeuristicEvaluator, &EpisodeOptions::default()).unwrap();
        let t = out.trace.steps[0].transition.as_ref().unwrap();
        assert!(!t.accepted);
        assert_eq!(t.reason.as_deref(), Some("no_context_graph"));
        assert!(out.trace.steps[0].cg_state.is_none());
    }

    #[test]
    fn transition_applies_before_action() {
        let cfg = moderator_config();
        let mut p = Scripted(vec!["TRANSITION: COMBINATION_TESTING\nACTION: place A", "TRANSITION: VERIFICATION\nACTION: place B"], 0);
        let out = run_episode(&cfg, &Scaffolding::shipped(Tier::Cg), &mut p, &HeuristicEvaluator, &EpisodeOptions::default()).unwrap();
        assert_eq!(out.trace.steps[0].cg_state.as_deref(), Some("COMBINATION_TESTING"));
        let second = out.trace.steps[1].transition.as_ref().unwrap();
        assert_eq!(second.reason.as_deref(), Some("no_edge"));
        assert!(out.trace.steps[1].observation.detector.is_active());
    }

    #[test]
    fn mismatched_scaffolding_is_rejected() {
        let mut s = Scaffolding::shipped(Tier::Base);
        s.behaviors = Some(BehaviorSet::shipped());
        let mut p = Scripted(vec![], 0);
        assert!(matches!(
            run_episode(&moderator_config(), &s, &mut p, &HeuristicEvaluator, &EpisodeOptions::default()),
            Err(HarnessError::Scaffolding(_))
        ));
    }
}
