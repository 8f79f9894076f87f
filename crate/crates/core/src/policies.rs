//! Scripted reference policies for the three tiers.
//!
//! They are deterministic in the observation history and speak the same
//! text protocol a model would, so they exercise parsing, transitions and
//! monitors end to end.
//!
//! * [`BasePolicy`] scans singles then pairs, takes the first activating
//!   configuration as its hypothesis, toggles it until the episode has seen
//!   `target_activations` activations, then checks.
//! * [`GraphPolicy`] keeps every rule/set hypothesis consistent with the
//!   current regime, tests singles in `INITIAL_EXPLORATION`, discriminating
//!   combinations in `COMBINATION_TESTING`, and verifies in `VERIFICATION`.
//!   With `follow_notifications` it moves into the newest dynamic state when
//!   a `[SYSTEM]` notification arrives and explores from there.

use crate::environment::RuleType;
use crate::graph::RenderedGraph;
use crate::harness::{Policy, PolicyError};
use crate::objects::{ObjectId, ObjectSet};
use crate::prompt::{MenuAction, PromptContext, action_menu};

const INITIAL: &str = "INITIAL_EXPLORATION";
const COMBINATION: &str = "COMBINATION_TESTING";
const VERIFICATION: &str = "VERIFICATION";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hypothesis {
    pub rule_type: RuleType,
    pub set: ObjectSet,
}

impl Hypothesis {
    pub fn predicts(&self, on: ObjectSet) -> bool {
        match self.rule_type {
            RuleType::Conjunctive => self.set.is_subset(on),
            RuleType::Disjunctive => self.set.intersects(on),
        }
    }

    /// Smallest configuration the hypothesis predicts to be active.
    fn witness(&self) -> ObjectSet {
        match self.rule_type {
            RuleType::Conjunctive => self.set,
            RuleType::Disjunctive => self.set.iter().next().into_iter().collect(),
        }
    }
}

/// Every distinct hypothesis over `object_count` objects. Singleton
/// conjunctive rules behave exactly like singleton disjunctive ones, so only
/// the disjunctive form is kept.
pub fn hypothesis_space(object_count: u8) -> Vec<Hypothesis> {
    let mut out = Vec::new();
    for set in ObjectSet::universe(object_count).subsets().into_iter().filter(|s| !s.is_empty()) {
        out.push(Hypothesis { rule_type: RuleType::Disjunctive, set });
        if set.len() >= 2 {
            out.push(Hypothesis { rule_type: RuleType::Conjunctive, set });
        }
    }
    out
}

/// Observations split into regimes: a new regime starts at any observation
/// that no hypothesis can reconcile with the current one.
#[derive(Debug, Clone)]
struct Knowledge {
    space: Vec<Hypothesis>,
    observations: Vec<(ObjectSet, bool)>,
    regime_start: usize,
}

impl Knowledge {
    fn new(object_count: u8) -> Self {
        Self { space: hypothesis_space(object_count), observations: Vec::new(), regime_start: 0 }
    }

    fn regime(&self) -> &[(ObjectSet, bool)] {
        &self.observations[self.regime_start..]
    }

    fn consistent(&self) -> Vec<Hypothesis> {
        let regime = self.regime();
        self.space
            .iter()
            .copied()
            .filter(|h| regime.iter().all(|&(s, a)| h.predicts(s) == a))
            .collect()
    }

    /// Record an observation; returns true if it opened a new regime.
    fn record(&mut self, set: ObjectSet, active: bool) -> bool {
        self.observations.push((set, active));
        if self.consistent().is_empty() {
            self.regime_start = self.observations.len() - 1;
            true
        } else {
            false
        }
    }

    fn tested(&self, set: ObjectSet) -> bool {
        self.regime().iter().any(|&(s, _)| s == set)
    }

    /// The hypothesis with the fewest mismatches in the current regime.
    fn best(&self) -> Hypothesis {
        let regime = self.regime();
        *self
            .space
            .iter()
            .min_by_key(|h| regime.iter().filter(|&&(s, a)| h.predicts(s) != a).count())
            .expect("hypothesis space is non-empty")
    }
}

fn on_set(ctx: &PromptContext) -> ObjectSet {
    ctx.on_detector.iter().copied().collect()
}

/// Next edit toward `target`: removals first, then placements, label order.
fn step_toward(on: ObjectSet, target: ObjectSet) -> Option<MenuAction> {
    if let Some(o) = on.difference(target).iter().next() {
        return Some(MenuAction::Remove(o));
    }
    target.difference(on).iter().next().map(MenuAction::Place)
}

fn toggle(on: ObjectSet, config: ObjectSet) -> MenuAction {
    let last = config.iter().last().expect("non-empty configuration");
    let mut without = config;
    without.remove(last);
    if on == config {
        MenuAction::Remove(last)
    } else if on == without {
        MenuAction::Place(last)
    } else {
        step_toward(on, config).unwrap_or(MenuAction::Remove(last))
    }
}

fn blicket_list(set: ObjectSet) -> String {
    let v: Vec<String> = set.iter().map(|o| o.to_string()).collect();
    v.join(", ")
}

fn format_response(reasoning: &str, transition: Option<&str>, action: &str, answer: Option<Hypothesis>) -> String {
    let mut out = format!("REASONING: {reasoning}\n");
    if let Some(t) = transition {
        out.push_str(&format!("TRANSITION: {t}\n"));
    }
    out.push_str(&format!("ACTION: {action}\n"));
    if let Some(h) = answer {
        out.push_str(&format!("RULE_TYPE: {}\nBLICKETS: {}\n", h.rule_type, blicket_list(h.set)));
    }
    out
}

/// Observation produced by the previous turn's place/remove, if any.
fn last_evaluation(ctx: &PromptContext, last: Option<MenuAction>) -> Option<(ObjectSet, bool)> {
    match (last, ctx.last_observation) {
        (Some(MenuAction::Place(_) | MenuAction::Remove(_)), Some(obs)) => Some((on_set(ctx), obs.detector.is_active())),
        _ => None,
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BasePhase {
    Scan,
    Confirm { hypothesis: Hypothesis, config: ObjectSet },
    AllIn,
}

/// Unscaffolded reference policy. Replies with menu numbers.
#[derive(Debug, Clone)]
pub struct BasePolicy {
    target_activations: u32,
    object_count: u8,
    scan: Vec<ObjectSet>,
    regime: Vec<(ObjectSet, bool)>,
    phase: BasePhase,
    activations: u32,
    last: Option<MenuAction>,
}

impl BasePolicy {
    pub fn new(object_count: u8, target_activations: u32) -> Self {
        let scan = ObjectSet::universe(object_count)
            .subsets()
            .into_iter()
            .filter(|s| (1..=2).contains(&s.len()))
            .collect();
        Self { target_activations, object_count, scan, regime: Vec::new(), phase: BasePhase::Scan, activations: 0, last: None }
    }

    fn number(&self, action: MenuAction) -> usize {
        action_menu(self.object_count).iter().position(|a| *a == action).expect("action is on the menu") + 1
    }

    fn reply(&mut self, reasoning: &str, action: MenuAction, answer: Option<Hypothesis>) -> String {
        self.last = Some(action);
        format_response(reasoning, None, &self.number(action).to_string(), answer)
    }
}

impl Policy for BasePolicy {
    fn name(&self) -> String {
        format!("scripted-base(target={})", self.target_activations)
    }

    fn decide(&mut self, ctx: &PromptContext) -> Result<String, PolicyError> {
        let on = on_set(ctx);
        if let Some((set, active)) = last_evaluation(ctx, self.last) {
            self.activations += u32::from(active);
            match self.phase {
                BasePhase::Confirm { hypothesis, .. } if hypothesis.predicts(set) != active => {
                    self.phase = BasePhase::Scan;
                    self.regime = vec![(set, active)];
                }
                BasePhase::Scan if active && !set.is_empty() => {
                    let rule_type = if set.len() == 1 { RuleType::Disjunctive } else { RuleType::Conjunctive };
                    self.phase = BasePhase::Confirm { hypothesis: Hypothesis { rule_type, set }, config: set };
                    self.regime.push((set, active));
                }
                _ => self.regime.push((set, active)),
            }
        }
        let everything = ObjectSet::universe(self.object_count);
        let all_in = Hypothesis { rule_type: RuleType::Conjunctive, set: everything };

        if ctx.steps_remaining <= 1 {
            let h = match self.phase {
                BasePhase::Confirm { hypothesis, .. } => hypothesis,
                _ => all_in,
            };
            return Ok(self.reply("Out of steps; submitting my best guess.", MenuAction::Check, Some(h)));
        }
        match self.phase {
            BasePhase::Confirm { hypothesis, config } => {
                if self.activations >= self.target_activations {
                    return Ok(self.reply("The hypothesis has held; submitting.", MenuAction::Check, Some(hypothesis)));
                }
                Ok(self.reply(&format!("Confirming {config} activates the detector."), toggle(on, config), None))
            }
            BasePhase::Scan => {
                let next = self.scan.iter().copied().find(|s| !self.regime.iter().any(|&(t, _)| t == *s));
                match next {
                    Some(target) => {
                        let action = step_toward(on, target).unwrap_or(MenuAction::Remove(target.iter().next().expect("non-empty")));
                        Ok(self.reply(&format!("Testing {target}."), action, None))
                    }
                    None => {
                        self.phase = BasePhase::AllIn;
                        self.decide_all_in(on, all_in)
                    }
                }
            }
            BasePhase::AllIn => self.decide_all_in(on, all_in),
        }
    }
}

impl BasePolicy {
    fn decide_all_in(&mut self, on: ObjectSet, all_in: Hypothesis) -> Result<String, PolicyError> {
        match step_toward(on, all_in.set) {
            Some(a) => Ok(self.reply("No single or pair works; trying everything.", a, None)),
            None => Ok(self.reply("Everything is needed.", MenuAction::Check, Some(all_in))),
        }
    }
}

// ---------------------------------------------------------------------------

/// Graph-following reference policy for the `cg` and `cg_db` tiers.
#[derive(Debug, Clone)]
pub struct GraphPolicy {
    verification_rounds: u32,
    follow_notifications: bool,
    object_count: u8,
    knowledge: Knowledge,
    resolved: Option<(Hypothesis, usize)>,
    home: Option<String>,
    last: Option<MenuAction>,
}

impl GraphPolicy {
    pub fn new(object_count: u8, verification_rounds: u32, follow_notifications: bool) -> Self {
        Self {
            verification_rounds,
            follow_notifications,
            object_count,
            knowledge: Knowledge::new(object_count),
            resolved: None,
            home: None,
            last: None,
        }
    }

    pub fn cg(object_count: u8) -> Self {
        Self::new(object_count, 3, false)
    }

    pub fn cg_db(object_count: u8) -> Self {
        Self::new(object_count, 3, true)
    }

    fn reply(&mut self, reasoning: &str, transition: Option<&str>, action: MenuAction, answer: Option<Hypothesis>) -> String {
        self.last = Some(action);
        format_response(reasoning, transition, &action.to_string(), answer)
    }

    /// First untested configuration of two or more objects on which the
    /// remaining hypotheses disagree.
    fn discriminating(&self, live: &[Hypothesis]) -> Option<ObjectSet> {
        ObjectSet::universe(self.object_count)
            .subsets()
            .into_iter()
            .filter(|s| s.len() >= 2 && !self.knowledge.tested(*s))
            .find(|s| {
                let yes = live.iter().filter(|h| h.predicts(*s)).count();
                yes > 0 && yes < live.len()
            })
    }
}

impl Policy for GraphPolicy {
    fn name(&self) -> String {
        let tier = if self.follow_notifications { "cg_db" } else { "cg" };
        format!("scripted-{tier}(rounds={})", self.verification_rounds)
    }

    fn decide(&mut self, ctx: &PromptContext) -> Result<String, PolicyError> {
        let on = on_set(ctx);
        if let Some((set, active)) = last_evaluation(ctx, self.last) {
            if self.knowledge.record(set, active) {
                self.resolved = None;
            }
        }
        let rendered = ctx.graph_rendering.as_deref().and_then(RenderedGraph::parse);
        if self.follow_notifications && !ctx.pending_notifications.is_empty() {
            if let Some(newest) = rendered.as_ref().and_then(|r| r.overview.last()) {
                self.home = Some(newest.0.clone());
            }
        }
        let hop = |goal: &str| -> Option<String> {
            rendered.as_ref().and_then(|r| r.path_to(goal)).and_then(|p| p.into_iter().next())
        };

        let live = self.knowledge.consistent();
        if self.resolved.is_none() && live.len() == 1 {
            self.resolved = Some((live[0], self.knowledge.observations.len()));
        }

        if ctx.steps_remaining <= 1 {
            let h = self.resolved.map(|(h, _)| h).unwrap_or_else(|| self.knowledge.best());
            return Ok(self.reply("Out of steps; submitting the best-supported rule.", None, MenuAction::Check, Some(h)));
        }

        if let Some((h, since)) = self.resolved {
            let config = h.witness();
            let confirmations = self.knowledge.observations[since..]
                .iter()
                .filter(|&&(s, a)| s == config && a)
                .count() as u32;
            let next = hop(VERIFICATION);
            let arrives = rendered.as_ref().is_none_or(|r| r.current == VERIFICATION)
                || rendered.as_ref().and_then(|r| r.path_to(VERIFICATION)).is_some_and(|p| p.len() == 1);
            if confirmations >= self.verification_rounds && arrives {
                let reasoning = format!("Verified: {} over {}.", h.rule_type, h.set);
                return Ok(self.reply(&reasoning, next.as_deref(), MenuAction::Check, Some(h)));
            }
            let reasoning = format!("Only {} {} fits the evidence; verifying it.", h.rule_type, h.set);
            return Ok(self.reply(&reasoning, next.as_deref(), toggle(on, config), None));
        }

        let singles: Option<ObjectSet> = ObjectId::first(self.object_count)
            .into_iter()
            .map(|o| std::iter::once(o).collect::<ObjectSet>())
            .find(|s| !self.knowledge.tested(*s));
        let (target, location, reasoning) = match singles {
            Some(s) => (s, INITIAL, format!("Testing {s} on its own.")),
            None => match self.discriminating(&live) {
                Some(s) => (s, COMBINATION, format!("{} hypotheses remain; {s} separates them.", live.len())),
                None => {
                    let h = self.knowledge.best();
                    return Ok(self.reply("No test separates the remaining hypotheses.", None, MenuAction::Check, Some(h)));
                }
            },
        };
        let location = self.home.clone().unwrap_or_else(|| location.to_string());
        let transition = hop(&location);
        let action = step_toward(on, target).unwrap_or(MenuAction::Remove(target.iter().next().expect("non-empty")));
        Ok(self.reply(&reasoning, transition.as_deref(), action, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypothesis_space_size() {
        // 31 disjunctive sets plus 26 conjunctive sets of size two or more
        assert_eq!(hypothesis_space(5).len(), 57);
        assert_eq!(hypothesis_space(3).len(), 7 + 4);
    }

    #[test]
    fn knowledge_detects_regime_change() {
        let mut k = Knowledge::new(5);
        let ab: ObjectSet = "AB".parse().unwrap();
        assert!(!k.record(ab, true));
        assert!(!k.record(ab, true));
        assert!(k.record(ab, false));
        assert_eq!(k.regime().len(), 1);
    }

    #[test]
    fn moves_remove_before_placing() {
        let on: ObjectSet = "AB".parse().unwrap();
        let target: ObjectSet = "AC".parse().unwrap();
        assert_eq!(step_toward(on, target), Some(MenuAction::Remove("B".parse().unwrap())));
        assert_eq!(step_toward("A".parse().unwrap(), target), Some(MenuAction::Place("C".parse().unwrap())));
        assert_eq!(step_toward(target, target), None);
    }
}
