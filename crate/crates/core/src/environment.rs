//! The blicket detector.
//!
//! An [`EnvState`] owns one episode: the hidden rule, the objects currently
//! on the detector (with the step at which each was placed), the step budget
//! and a seeded generator for the stochastic regime. In the hidden-moderator
//! condition the rule is replaced, silently, right after the activation that
//! brings the activation count to the switch point.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::defaults::{ConditionDefaults, PostSwitchDifficulty};
use crate::objects::{ObjectId, ObjectSet, MAX_OBJECTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Conjunctive,
    Disjunctive,
    OrderSensitive,
    Stochastic,
    HiddenModerator,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Conjunctive,
        Condition::Disjunctive,
        Condition::OrderSensitive,
        Condition::Stochastic,
        Condition::HiddenModerator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Conjunctive => "conjunctive",
            Condition::Disjunctive => "disjunctive",
            Condition::OrderSensitive => "order_sensitive",
            Condition::Stochastic => "stochastic",
            Condition::HiddenModerator => "hidden_moderator",
        }
    }

    pub fn parse(s: &str) -> Option<Condition> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Condition::ALL.into_iter().find(|c| c.name() == norm)
    }

    pub fn is_extended(self) -> bool {
        !matches!(self, Condition::Conjunctive | Condition::Disjunctive)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleType {
    Conjunctive,
    Disjunctive,
}

impl RuleType {
    pub fn parse(s: &str) -> Option<RuleType> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conjunctive" => Some(RuleType::Conjunctive),
            "disjunctive" => Some(RuleType::Disjunctive),
            _ => None,
        }
    }
}

impl fmt::Display for RuleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleType::Conjunctive => "conjunctive",
            RuleType::Disjunctive => "disjunctive",
        })
    }
}

/// Rule that replaces the initial one after the switch point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostSwitchRule {
    pub rule_type: RuleType,
    pub blickets: ObjectSet,
}

/// Full parameterization of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub condition: Condition,
    pub object_count: u8,
    pub blickets: ObjectSet,
    pub distractors: ObjectSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_constraint: Option<Vec<ObjectId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_point: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_switch_rule: Option<PostSwitchRule>,
    pub step_budget: u32,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn objects(&self) -> Vec<ObjectId> {
        ObjectId::first(self.object_count)
    }

    /// Every violated invariant, in a stable order. Empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(3..=MAX_OBJECTS).contains(&self.object_count) {
            v.push(format!("object_count must be 3, 4 or 5 (got {})", self.object_count));
        }
        let universe = ObjectSet::universe(self.object_count);
        if self.blickets.union(self.distractors) != universe {
            v.push("blickets and distractors must cover the object set exactly".into());
        }
        if self.blickets.intersects(self.distractors) {
            v.push("blickets and distractors must be disjoint".into());
        }
        if self.blickets.is_empty() {
            v.push("at least one blicket is required".into());
        }
        if self.step_budget < 1 {
            v.push("step_budget must be at least 1".into());
        }
        let is = |c| self.condition == c;
        match (&self.order_constraint, is(Condition::OrderSensitive)) {
            (Some(order), true) => {
                let as_set: ObjectSet = order.iter().copied().collect();
                if order.len() != self.blickets.len() || as_set != self.blickets {
                    v.push("order_constraint must be a permutation of the blickets".into());
                }
            }
            (None, true) => v.push("order_sensitive requires order_constraint".into()),
            (Some(_), false) => v.push("order_constraint is only valid for order_sensitive".into()),
            (None, false) => {}
        }
        match (self.activation_probability, is(Condition::Stochastic)) {
            (Some(p), true) => {
                if !(p > 0.0 && p <= 1.0) {
                    v.push(format!("activation_probability must lie in (0, 1] (got {p})"));
                }
            }
            (None, true) => v.push("stochastic requires activation_probability".into()),
            (Some(_), false) => v.push("activation_probability is only valid for stochastic".into()),
            (None, false) => {}
        }
        let hm = is(Condition::HiddenModerator);
        match (self.switch_point, hm) {
            (Some(0), true) => v.push("switch_point must be positive".into()),
            (None, true) => v.push("hidden_moderator requires switch_point".into()),
            (Some(_), false) => v.push("switch_point is only valid for hidden_moderator".into()),
            _ => {}
        }
        match (&self.post_switch_rule, hm) {
            (Some(rule), true) => {
                if rule.blickets.is_empty() || !rule.blickets.is_subset(universe) {
                    v.push("post_switch_rule blickets must be a non-empty subset of the objects".into());
                }
            }
            (None, true) => v.push("hidden_moderator requires post_switch_rule".into()),
            (Some(_), false) => v.push("post_switch_rule is only valid for hidden_moderator".into()),
            (None, false) => {}
        }
        v
    }

    /// The rule in force at the start of the episode.
    pub fn initial_rule(&self) -> RuleSpec {
        let rule_type = match self.condition {
            Condition::Disjunctive => RuleType::Disjunctive,
            _ => RuleType::Conjunctive,
        };
        RuleSpec {
            rule_type,
            active_blickets: self.blickets,
            order_constraint: self.order_constraint.clone(),
            activation_probability: self.activation_probability,
        }
    }

    pub fn post_switch_spec(&self) -> Option<RuleSpec> {
        self.post_switch_rule.as_ref().map(|r| RuleSpec {
            rule_type: r.rule_type,
            active_blickets: r.blickets,
            order_constraint: None,
            activation_probability: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rule_type: RuleType,
    pub active_blickets: ObjectSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_constraint: Option<Vec<ObjectId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_probability: Option<f64>,
}

impl RuleSpec {
    pub fn is_deterministic(&self) -> bool {
        self.activation_probability.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Detector {
    Active,
    Inactive,
}

impl Detector {
    pub fn is_active(self) -> bool {
        self == Detector::Active
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detector::Active => "ACTIVE",
            Detector::Inactive => "INACTIVE",
        })
    }
}

/// An object on the detector and the (1-based) step at which it was placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub object: ObjectId,
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub rule_type: RuleType,
    pub claimed_blickets: ObjectSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Place { object: ObjectId },
    Remove { object: ObjectId },
    Check { answer: Answer },
    Noop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Place { object } => write!(f, "place {object}"),
            Action::Remove { object } => write!(f, "remove {object}"),
            Action::Check { answer } => {
                write!(f, "check ({} {})", answer.rule_type, answer.claimed_blickets)
            }
            Action::Noop => f.write_str("noop"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub detector: Detector,
    pub steps_remaining: u32,
    pub terminated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectSetError {
    None,
    OverInclusion,
    UnderInclusion,
    Mixed,
}

impl ObjectSetError {
    pub fn classify(claimed: ObjectSet, truth: ObjectSet) -> Self {
        if claimed == truth {
            ObjectSetError::None
        } else if truth.is_subset(claimed) {
            ObjectSetError::OverInclusion
        } else if claimed.is_subset(truth) {
            ObjectSetError::UnderInclusion
        } else {
            ObjectSetError::Mixed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    pub rule_type_error: bool,
    pub object_set_error: ObjectSetError,
    pub graded_against: RuleSpec,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid episode config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("episode has terminated")]
    EpisodeTerminated,
    #[error("object {0} is not part of this episode")]
    UnknownObject(ObjectId),
    #[error("unsupported object count {0} (expected 3, 4 or 5)")]
    UnsupportedObjectCount(u8),
}

/// Evaluate a rule against the current placement.
///
/// Deterministic rules never touch `rng`; stochastic rules draw exactly once
/// per call, and only when the base condition is satisfied.
pub fn evaluate_rule<R: Rng + ?Sized>(rule: &RuleSpec, placement: &[Placement], rng: &mut R) -> Detector {
    let present: ObjectSet = placement.iter().map(|p| p.object).collect();
    let base = match rule.rule_type {
        RuleType::Conjunctive => rule.active_blickets.is_subset(present),
        RuleType::Disjunctive => present.intersects(rule.active_blickets),
    };
    let ordered = base
        && rule.order_constraint.as_ref().is_none_or(|order| {
            let step_of = |id: ObjectId| placement.iter().find(|p| p.object == id).map(|p| p.step);
            order.windows(2).all(|w| match (step_of(w[0]), step_of(w[1])) {
                (Some(a), Some(b)) => a < b,
                _ => false,
            })
        });
    if !ordered {
        return Detector::Inactive;
    }
    match rule.activation_probability {
        Some(p) if rng.random::<f64>() >= p => Detector::Inactive,
        _ => Detector::Active,
    }
}

/// Grade an answer against a rule.
pub fn grade(rule: &RuleSpec, answer: &Answer) -> Verdict {
    let rule_type_error = answer.rule_type != rule.rule_type;
    let object_set_error = ObjectSetError::classify(answer.claimed_blickets, rule.active_blickets);
    Verdict {
        correct: !rule_type_error && object_set_error == ObjectSetError::None,
        rule_type_error,
        object_set_error,
        graded_against: rule.clone(),
    }
}

/// Live state of one episode.
#[derive(Debug, Clone)]
pub struct EnvState {
    config: EpisodeConfig,
    current_rule: RuleSpec,
    placement: Vec<Placement>,
    steps_used: u32,
    activation_count: u32,
    switched: bool,
    last_detector: Detector,
    rng: ChaCha8Rng,
    terminated: bool,
    verdict: Option<Verdict>,
    answer: Option<Answer>,
}

impl EnvState {
    pub fn new(config: EpisodeConfig) -> Result<Self, EnvError> {
        let violations = config.violations();
        if !violations.is_empty() {
            return Err(EnvError::InvalidConfig(violations));
        }
        Ok(Self {
            current_rule: config.initial_rule(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            placement: Vec::new(),
            steps_used: 0,
            activation_count: 0,
            switched: false,
            last_detector: Detector::Inactive,
            terminated: false,
            verdict: None,
            answer: None,
        })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn current_rule(&self) -> &RuleSpec {
        &self.current_rule
    }

    pub fn placement(&self) -> &[Placement] {
        &self.placement
    }

    /// Objects on the detector in placement order.
    pub fn on_detector(&self) -> Vec<ObjectId> {
        self.placement.iter().map(|p| p.object).collect()
    }

    pub fn steps_used(&self) -> u32 {
        self.steps_used
    }

    pub fn steps_remaining(&self) -> u32 {
        self.config.step_budget - self.steps_used
    }

    pub fn activation_count(&self) -> u32 {
        self.activation_count
    }

    pub fn switched(&self) -> bool {
        self.switched
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn verdict(&self) -> Option<&Verdict> {
        self.verdict.as_ref()
    }

    pub fn answer(&self) -> Option<&Answer> {
        self.answer.as_ref()
    }

    /// Apply one action. Every accepted action consumes exactly one step.
    ///
    /// `check` grades the answer against the rule in force, terminates the
    /// episode and reports the last detector status without re-evaluating.
    pub fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        if self.terminated {
            return Err(EnvError::EpisodeTerminated);
        }
        let universe = ObjectSet::universe(self.config.object_count);
        if let Action::Place { object } | Action::Remove { object } = action {
            if !universe.contains(*object) {
                return Err(EnvError::UnknownObject(*object));
            }
        }
        self.steps_used += 1;
        let step = self.steps_used;
        match action {
            Action::Check { answer } => {
                self.verdict = Some(grade(&self.current_rule, answer));
                self.answer = Some(answer.clone());
                self.terminated = true;
                return Ok(self.observation());
            }
            Action::Place { object } => {
                if !self.placement.iter().any(|p| p.object == *object) {
                    self.placement.push(Placement { object: *object, step });
                }
            }
            Action::Remove { object } => self.placement.retain(|p| p.object != *object),
            Action::Noop => {}
        }
        let detector = evaluate_rule(&self.current_rule, &self.placement, &mut self.rng);
        self.last_detector = detector;
        if detector.is_active() {
            self.activation_count += 1;
            if let (Some(n), Some(post)) = (self.config.switch_point, self.config.post_switch_spec()) {
                if !self.switched && self.activation_count == n {
                    self.current_rule = post;
                    self.switched = true;
                }
            }
        }
        if self.steps_used >= self.config.step_budget {
            self.terminated = true;
        }
        Ok(self.observation())
    }

    fn observation(&self) -> Observation {
        Observation {
            detector: self.last_detector,
            steps_remaining: self.steps_remaining(),
            terminated: self.terminated,
        }
    }

    /// Grade an answer against the rule currently in force, without side effects.
    pub fn grade_answer(&self, answer: &Answer) -> Verdict {
        grade(&self.current_rule, answer)
    }
}

/// Create an episode from a config.
pub fn create_episode(config: EpisodeConfig) -> Result<EnvState, EnvError> {
    EnvState::new(config)
}

/// Optional explicit role assignment used to pin a run to fixed blicket sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blickets: Option<ObjectSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_constraint: Option<Vec<ObjectId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_point: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_switch: Option<PostSwitchDifficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_switch_rule: Option<PostSwitchRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_budget: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_probability: Option<f64>,
}

/// Sample a config with the shipped defaults.
pub fn assign_roles(condition: Condition, object_count: u8, seed: u64) -> Result<EpisodeConfig, EnvError> {
    assign_roles_with(&ConditionDefaults::shipped(), &RoleOverrides::default(), condition, object_count, seed)
}

/// Sample which objects are blickets (and, for the hidden moderator, the
/// post-switch set) uniformly from the valid assignments, deterministically
/// in `seed`. Explicit overrides win over sampled values.
pub fn assign_roles_with(
    defaults: &ConditionDefaults,
    overrides: &RoleOverrides,
    condition: Condition,
    object_count: u8,
    seed: u64,
) -> Result<EpisodeConfig, EnvError> {
    if !(3..=MAX_OBJECTS).contains(&object_count) {
        return Err(EnvError::UnsupportedObjectCount(object_count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Role sampling runs on its own stream so it never shifts the episode's
    // stochastic draws.
    rng.set_stream(1);

    let universe = ObjectSet::universe(object_count);
    let blickets = match overrides.blickets {
        Some(b) => b,
        None => {
            let k = defaults.blicket_count.clamp(1, object_count - 1) as usize;
            rand::seq::index::sample(&mut rng, object_count as usize, k)
                .into_iter()
                .map(|i| ObjectId::new(i as u8).expect("index below object count"))
                .collect()
        }
    };
    let distractors = universe.difference(blickets);

    let mut config = EpisodeConfig {
        condition,
        object_count,
        blickets,
        distractors,
        order_constraint: None,
        activation_probability: None,
        switch_point: None,
        post_switch_rule: None,
        step_budget: overrides
            .step_budget
            .or_else(|| defaults.budget_for(object_count))
            .unwrap_or(75),
        seed,
    };

    match condition {
        Condition::OrderSensitive => {
            config.order_constraint = Some(match &overrides.order_constraint {
                Some(order) => order.clone(),
                None => {
                    let mut order = blickets.to_vec();
                    order.shuffle(&mut rng);
                    order
                }
            });
        }
        Condition::Stochastic => {
            config.activation_probability =
                Some(overrides.activation_probability.unwrap_or(defaults.activation_probability));
        }
        Condition::HiddenModerator => {
            config.switch_point = Some(overrides.switch_point.unwrap_or(defaults.hidden_moderator.switch_point));
            config.post_switch_rule = Some(match &overrides.post_switch_rule {
                Some(rule) => rule.clone(),
                None => {
                    let difficulty = overrides.post_switch.unwrap_or(defaults.hidden_moderator.post_switch);
                    let mut pool = distractors.to_vec();
                    pool.shuffle(&mut rng);
                    let (rule_type, take) = match difficulty {
                        PostSwitchDifficulty::Easy => (RuleType::Disjunctive, 1),
                        PostSwitchDifficulty::Hard => (RuleType::Conjunctive, 3),
                    };
                    let chosen: ObjectSet = pool.into_iter().take(take).collect();
                    PostSwitchRule { rule_type, blickets: chosen }
                }
            });
        }
        Condition::Conjunctive | Condition::Disjunctive => {}
    }

    let violations = config.violations();
    if !violations.is_empty() {
        return Err(EnvError::InvalidConfig(violations));
    }
    Ok(config)
}
