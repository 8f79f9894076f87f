//! Episode classification, per-agent run summaries, detection statistics
//! and the error taxonomy. Everything here reads traces only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::environment::{Action, Condition, Detector, ObjectSetError};
use crate::harness::Tier;
use crate::monitor::BehaviorId;
use crate::objects::ObjectSet;
use crate::trace::EpisodeTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    PreSwitch,
    ExactlyN,
    ReasoningEligible,
    NotApplicable,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::PreSwitch => "pre_switch",
            Category::ExactlyN => "exactly_n",
            Category::ReasoningEligible => "reasoning_eligible",
            Category::NotApplicable => "not_applicable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeClassification {
    pub category: Category,
    /// Activation count when the answer was submitted or the episode ended.
    pub activations_at_submission: u32,
}

/// Compare the final activation count with the switch point. Checking does
/// not evaluate the detector, so the final count is the count at submission.
pub fn classify_episode(trace: &EpisodeTrace) -> EpisodeClassification {
    let activations = trace.activation_count_final;
    let category = match (trace.config.condition, trace.config.switch_point) {
        (Condition::HiddenModerator, Some(n)) => match activations.cmp(&n) {
            std::cmp::Ordering::Less => Category::PreSwitch,
            std::cmp::Ordering::Equal => Category::ExactlyN,
            std::cmp::Ordering::Greater => Category::ReasoningEligible,
        },
        _ => Category::NotApplicable,
    };
    EpisodeClassification { category, activations_at_submission: activations }
}

/// 1-based index of the first step whose observation was ACTIVE.
pub fn steps_to_first_activation(trace: &EpisodeTrace) -> Option<u32> {
    trace
        .steps
        .iter()
        .find(|s| !matches!(s.action, Action::Check { .. }) && s.observation.detector == Detector::Active)
        .map(|s| s.step_index)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub rule_type: usize,
    pub over_inclusion: usize,
    pub under_inclusion: usize,
    pub mixed: usize,
    /// Episodes that ended without an answer.
    pub unanswered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Option<Distribution> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.len().is_multiple_of(2) { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] };
        Some(Distribution { mean: v.iter().sum::<f64>() / v.len() as f64, median, min: v[0], max: v[v.len() - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub agent: String,
    pub tier: Tier,
    pub condition: Condition,
    pub n: usize,
    pub raw_correct: usize,
    pub raw_accuracy: Option<f64>,
    pub answered: usize,
    pub answer_rate: Option<f64>,
    pub aborted: usize,
    /// Share of episodes whose activation count reached the switch point.
    pub switch_rate_reached: Option<f64>,
    /// Share of episodes that switched and then observed the detector again.
    pub switch_rate_observed: Option<f64>,
    pub pre_switch_count: usize,
    pub pre_switch_correct: usize,
    pub exactly_n_count: usize,
    pub exactly_n_correct: usize,
    pub re_count: usize,
    pub re_correct: usize,
    pub re_rate: Option<f64>,
    /// Absent when there are no reasoning-eligible episodes.
    pub re_accuracy: Option<f64>,
    pub exactly_n_rate: Option<f64>,
    pub steps_taken: Option<Distribution>,
    pub steps_to_first_activation: Option<Distribution>,
    pub parse_failures: usize,
    pub parse_failure_rate: Option<f64>,
    pub errors: ErrorBreakdown,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("agent {agent} mixes conditions {first} and {second}")]
    MixedConditionGroup { agent: String, first: Condition, second: Condition },
}

/// Group traces by agent label, keeping first-seen order.
pub fn group_by_agent(traces: &[EpisodeTrace]) -> Vec<(String, Vec<&EpisodeTrace>)> {
    let mut groups: Vec<(String, Vec<&EpisodeTrace>)> = Vec::new();
    for t in traces {
        match groups.iter_mut().find(|(a, _)| *a == t.scaffolding.agent) {
            Some((_, g)) => g.push(t),
            None => groups.push((t.scaffolding.agent.clone(), vec![t])),
        }
    }
    groups
}

/// Summaries per agent, in first-seen agent order. Each agent's traces
/// must share one condition.
pub fn summarize_run(traces: &[EpisodeTrace]) -> Result<Vec<RunSummary>, MetricsError> {
    group_by_agent(traces).into_iter().map(|(agent, group)| summarize_group(&agent, &group)).collect()
}

pub fn summarize_group(agent: &str, group: &[&EpisodeTrace]) -> Result<RunSummary, MetricsError> {
    let first = group.first().map(|t| t.config.condition).unwrap_or(Condition::HiddenModerator);
    if let Some(t) = group.iter().find(|t| t.config.condition != first) {
        return Err(MetricsError::MixedConditionGroup { agent: agent.to_string(), first, second: t.config.condition });
    }
    let n = group.len();
    let hidden = first == Condition::HiddenModerator;
    let mut s = RunSummary {
        agent: agent.to_string(),
        tier: group.first().map(|t| t.scaffolding.tier).unwrap_or(Tier::Base),
        condition: first,
        n,
        raw_correct: 0,
        raw_accuracy: None,
        answered: 0,
        answer_rate: None,
        aborted: 0,
        switch_rate_reached: None,
        switch_rate_observed: None,
        pre_switch_count: 0,
        pre_switch_correct: 0,
        exactly_n_count: 0,
        exactly_n_correct: 0,
        re_count: 0,
        re_correct: 0,
        re_rate: None,
        re_accuracy: None,
        exactly_n_rate: None,
        steps_taken: None,
        steps_to_first_activation: None,
        parse_failures: 0,
        parse_failure_rate: None,
        errors: ErrorBreakdown::default(),
    };
    let (mut reached, mut observed, mut total_steps) = (0, 0, 0);
    let mut steps = Vec::with_capacity(n);
    let mut first_activation = Vec::new();
    for t in group {
        let correct = t.correct();
        s.raw_correct += usize::from(correct);
        s.answered += usize::from(t.final_answer.is_some());
        s.aborted += usize::from(t.aborted);
        s.parse_failures += t.parse_failures as usize;
        total_steps += t.steps.len();
        steps.push(t.steps.len() as f64);
        if let Some(k) = steps_to_first_activation(t) {
            first_activation.push(k as f64);
        }
        if let Some(sp) = t.config.switch_point.filter(|_| hidden) {
            reached += usize::from(t.activation_count_final >= sp);
            observed += usize::from(t.post_switch_observed());
        }
        match classify_episode(t).category {
            Category::PreSwitch => {
                s.pre_switch_count += 1;
                s.pre_switch_correct += usize::from(correct);
            }
            Category::ExactlyN => {
                s.exactly_n_count += 1;
                s.exactly_n_correct += usize::from(correct);
            }
            Category::ReasoningEligible => {
                s.re_count += 1;
                s.re_correct += usize::from(correct);
            }
            Category::NotApplicable => {}
        }
        match &t.verdict {
            None => s.errors.unanswered += 1,
            Some(v) if !v.correct => {
                s.errors.rule_type += usize::from(v.rule_type_error);
                match v.object_set_error {
                    ObjectSetError::None => {}
                    ObjectSetError::OverInclusion => s.errors.over_inclusion += 1,
                    ObjectSetError::UnderInclusion => s.errors.under_inclusion += 1,
                    ObjectSetError::Mixed => s.errors.mixed += 1,
                }
            }
            Some(_) => {}
        }
    }
    s.raw_accuracy = ratio(s.raw_correct, n);
    s.answer_rate = ratio(s.answered, n);
    if hidden {
        s.switch_rate_reached = ratio(reached, n);
        s.switch_rate_observed = ratio(observed, n);
        s.re_rate = ratio(s.re_count, n);
        s.exactly_n_rate = ratio(s.exactly_n_count, n);
        s.re_accuracy = ratio(s.re_correct, s.re_count);
    }
    s.steps_taken = Distribution::of(&steps);
    s.steps_to_first_activation = Distribution::of(&first_activation);
    s.parse_failure_rate = ratio(s.parse_failures, total_steps);
    Ok(s)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub episodes: usize,
    pub switched_episodes: usize,
    pub firings: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// TP / (TP + FN), scoped to switched, correct episodes.
    pub sensitivity: Option<f64>,
    /// TP / (TP + FP).
    pub ppv: Option<f64>,
}

pub fn detection_stats(traces: &[EpisodeTrace], behavior: BehaviorId) -> DetectionStats {
    let mut d = DetectionStats { episodes: traces.len(), ..Default::default() };
    for t in traces {
        let fired = t.fired(behavior);
        let correct = t.correct();
        d.switched_episodes += usize::from(t.switched);
        d.firings += usize::from(fired);
        match (t.switched, fired, correct) {
            (true, true, true) => d.true_positives += 1,
            (_, true, _) => d.false_positives += 1,
            (true, false, true) => d.false_negatives += 1,
            _ => {}
        }
    }
    d.sensitivity = ratio(d.true_positives, d.true_positives + d.false_negatives);
    d.ppv = ratio(d.true_positives, d.true_positives + d.false_positives);
    d
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub episode_index: u32,
    pub category: Category,
    /// `None` when the episode ended without an answer.
    pub claimed: Option<ObjectSet>,
    pub truth: ObjectSet,
    pub rule_type_error: bool,
    pub object_set_error: Option<ObjectSetError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentErrors {
    pub agent: String,
    pub total_errors: usize,
    pub pre_switch_errors: usize,
    pub exactly_n_errors: usize,
    pub re_errors: usize,
    pub other_errors: usize,
    pub re_over_inclusion: usize,
    pub re_under_inclusion: usize,
    pub re_mixed: usize,
    pub re_rule_type: usize,
    pub re_unanswered: usize,
    /// Whether every exactly-N error submitted exactly the pre-switch set.
    /// `None` when there are no exactly-N errors.
    pub exactly_n_matches_pre_switch: Option<bool>,
    pub details: Vec<ErrorDetail>,
}

/// Per-agent error table. Agents without errors are omitted.
pub fn error_taxonomy(traces: &[EpisodeTrace]) -> Vec<AgentErrors> {
    let mut out = Vec::new();
    for (agent, group) in group_by_agent(traces) {
        let mut row = AgentErrors {
            agent,
            total_errors: 0,
            pre_switch_errors: 0,
            exactly_n_errors: 0,
            re_errors: 0,
            other_errors: 0,
            re_over_inclusion: 0,
            re_under_inclusion: 0,
            re_mixed: 0,
            re_rule_type: 0,
            re_unanswered: 0,
            exactly_n_matches_pre_switch: None,
            details: Vec::new(),
        };
        for t in group {
            if t.correct() {
                continue;
            }
            let category = classify_episode(t).category;
            let truth = t.verdict.as_ref().map(|v| v.graded_against.active_blickets).unwrap_or_else(|| {
                if t.switched { t.config.post_switch_spec().map(|r| r.active_blickets) } else { None }
                    .unwrap_or(t.config.blickets)
            });
            let claimed = t.final_answer.as_ref().map(|a| a.claimed_blickets);
            row.total_errors += 1;
            match category {
                Category::PreSwitch => row.pre_switch_errors += 1,
                Category::ExactlyN => {
                    row.exactly_n_errors += 1;
                    let matches = claimed == Some(t.config.blickets);
                    row.exactly_n_matches_pre_switch = Some(row.exactly_n_matches_pre_switch.unwrap_or(true) && matches);
                }
                Category::ReasoningEligible => {
                    row.re_errors += 1;
                    match &t.verdict {
                        None => row.re_unanswered += 1,
                        Some(v) => {
                            row.re_rule_type += usize::from(v.rule_type_error);
                            match v.object_set_error {
                                ObjectSetError::OverInclusion => row.re_over_inclusion += 1,
                                ObjectSetError::UnderInclusion => row.re_under_inclusion += 1,
                                ObjectSetError::Mixed => row.re_mixed += 1,
                                ObjectSetError::None => {}
                            }
                        }
                    }
                }
                Category::NotApplicable => row.other_errors += 1,
            }
            row.details.push(ErrorDetail {
                episode_index: t.episode_index,
                category,
                claimed,
                truth,
                rule_type_error: t.verdict.as_ref().is_some_and(|v| v.rule_type_error),
                object_set_error: t.verdict.as_ref().map(|v| v.object_set_error),
            });
        }
        if row.total_errors > 0 {
            out.push(row);
        }
    }
    out
}

/// Count of episodes per (agent, category, correct).
pub fn decomposition(traces: &[EpisodeTrace]) -> BTreeMap<(String, Category, bool), usize> {
    let mut out = BTreeMap::new();
    for t in traces {
        *out.entry((t.scaffolding.agent.clone(), classify_episode(t).category, t.correct())).or_insert(0) += 1;
    }
    out
}
