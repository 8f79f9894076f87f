//! Synthetic trace sets with known outcome counts, produced by replaying
//! fixed scripts through the real harness.
//!
//! Every episode uses the hidden-moderator layout with pre-switch rule
//! conjunctive {A,B}, switch point 3 and post-switch rule conjunctive
//! {C,D,E}, so category membership is fully determined by the script.

use crate::environment::{Condition, EpisodeConfig, PostSwitchRule, RuleType};
use crate::harness::{EpisodeOptions, HarnessError, Policy, PolicyError, Scaffolding, Tier, run_episode};
use crate::monitor::HeuristicEvaluator;
use crate::objects::ObjectSet;
use crate::prompt::PromptContext;
use crate::trace::EpisodeTrace;

/// Replays a fixed list of responses, then returns text without an action.
#[derive(Debug, Clone)]
pub struct ScriptPolicy {
    responses: Vec<String>,
    next: usize,
}

impl ScriptPolicy {
    pub fn new(responses: Vec<String>) -> Self {
        Self { responses, next: 0 }
    }
}

impl Policy for ScriptPolicy {
    fn name(&self) -> String {
        "script".into()
    }

    fn decide(&mut self, _ctx: &PromptContext) -> Result<String, PolicyError> {
        let out = self.responses.get(self.next).cloned().unwrap_or_else(|| "REASONING: thinking".into());
        self.next += 1;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// One activation, then the correct pre-switch answer.
    PreSwitchCorrect,
    /// Three activations, then the pre-switch answer.
    ExactlyN,
    /// Post-switch evidence, then the correct post-switch answer.
    ReCorrect,
    /// Post-switch evidence, then a conjunctive answer over the given set.
    ReAnswer(ObjectSet),
    /// Post-switch evidence, then no answer until the budget runs out.
    ReTimeout,
}

fn act(a: &str) -> String {
    format!("REASONING: next test\nACTION: {a}")
}

fn check(set: &str) -> String {
    format!("REASONING: done\nACTION: check\nRULE_TYPE: conjunctive\nBLICKETS: {set}")
}

pub fn script(outcome: Outcome) -> Vec<String> {
    let mut s: Vec<String> = ["place A", "place B"].map(act).to_vec();
    if outcome == Outcome::PreSwitchCorrect {
        s.push(check("A, B"));
        return s;
    }
    s.extend(["remove B", "place B", "remove B", "place B"].map(act));
    if outcome == Outcome::ExactlyN {
        s.push(check("A, B"));
        return s;
    }
    // {A,B} now fails, then the new triple is assembled.
    s.extend(["remove B", "place B", "remove A", "remove B", "place C", "place D", "place E"].map(act));
    match outcome {
        Outcome::ReCorrect => s.push(check("C, D, E")),
        Outcome::ReAnswer(set) => {
            for o in set.difference("CDE".parse().expect("valid set")).iter() {
                s.push(act(&format!("place {o}")));
            }
            let names: Vec<String> = set.iter().map(|o| o.to_string()).collect();
            s.push(check(&names.join(", ")));
        }
        Outcome::ReTimeout => {}
        _ => unreachable!(),
    }
    s
}

pub fn fixture_config(seed: u64, step_budget: u32) -> EpisodeConfig {
    EpisodeConfig {
        condition: Condition::HiddenModerator,
        object_count: 5,
        blickets: "AB".parse().expect("valid set"),
        distractors: "CDE".parse().expect("valid set"),
        order_constraint: None,
        activation_probability: None,
        switch_point: Some(3),
        post_switch_rule: Some(PostSwitchRule { rule_type: RuleType::Conjunctive, blickets: "CDE".parse().expect("valid set") }),
        step_budget,
        seed,
    }
}

/// Run one scripted episode per outcome for the given tier.
pub fn replay(tier: Tier, outcomes: &[Outcome], step_budget: u32, base_seed: u64) -> Result<Vec<EpisodeTrace>, HarnessError> {
    let scaffolding = Scaffolding::shipped(tier);
    outcomes
        .iter()
        .enumerate()
        .map(|(i, &o)| {
            let config = fixture_config(base_seed + i as u64, step_budget);
            let mut policy = ScriptPolicy::new(script(o));
            let options = EpisodeOptions { episode_index: i as u32, keep_prompts: false };
            Ok(run_episode(&config, &scaffolding, &mut policy, &HeuristicEvaluator, &options)?.trace)
        })
        .collect()
}

fn outcomes(parts: &[(Outcome, usize)]) -> Vec<Outcome> {
    parts.iter().flat_map(|&(o, k)| std::iter::repeat_n(o, k)).collect()
}

/// The three 75-step cells of the Run 08 comparison (50 episodes each).
pub fn run08_outcomes(tier: Tier) -> Vec<Outcome> {
    let all: ObjectSet = "ABCDE".parse().expect("valid set");
    let superset: ObjectSet = "ACDE".parse().expect("valid set");
    match tier {
        Tier::Base => outcomes(&[
            (Outcome::PreSwitchCorrect, 13),
            (Outcome::ExactlyN, 7),
            (Outcome::ReCorrect, 22),
            (Outcome::ReAnswer(all), 8),
        ]),
        Tier::Cg => outcomes(&[
            (Outcome::PreSwitchCorrect, 3),
            (Outcome::ExactlyN, 14),
            (Outcome::ReCorrect, 31),
            (Outcome::ReAnswer(all), 1),
            (Outcome::ReTimeout, 1),
        ]),
        Tier::CgDb => outcomes(&[
            (Outcome::PreSwitchCorrect, 4),
            (Outcome::ExactlyN, 3),
            (Outcome::ReCorrect, 41),
            (Outcome::ReAnswer(all), 1),
            (Outcome::ReAnswer(superset), 1),
        ]),
    }
}

pub const RUN08_BASE_SEED: u64 = 800;

pub fn run08_fixture() -> Result<Vec<EpisodeTrace>, HarnessError> {
    let mut out = Vec::new();
    for tier in Tier::ALL {
        out.extend(replay(tier, &run08_outcomes(tier), 75, RUN08_BASE_SEED)?);
    }
    Ok(out)
}

/// CG+DB episodes matching the pooled detection totals: 132 solved after a
/// firing, 4 fired but wrong, and 21 switched episodes that ended at the
/// switch without a firing.
pub fn detection_fixture() -> Result<Vec<EpisodeTrace>, HarnessError> {
    let all: ObjectSet = "ABCDE".parse().expect("valid set");
    let plan = outcomes(&[(Outcome::ReCorrect, 132), (Outcome::ReAnswer(all), 4), (Outcome::ExactlyN, 21)]);
    replay(Tier::CgDb, &plan, 75, 1000)
}
