//! Run plans, presets and the `run` / `analyze` / `verify-stats` commands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defaults::ConditionDefaults;
use crate::environment::{Condition, EnvError, EpisodeConfig, PostSwitchRule, RoleOverrides, RuleType, assign_roles_with};
use crate::harness::{EpisodeOptions, HarnessError, Policy, Scaffolding, Tier, run_episode};
use crate::metrics::MetricsError;
use crate::monitor::{HeuristicEvaluator, TriggerEvaluator};
use crate::policies::{BasePolicy, GraphPolicy};
use crate::reference::{ReferenceError, ReferenceTable};
use crate::report::{Analysis, analyze, report_files};
use crate::stats::RegressionReport;
use crate::store::{RunManifest, StoreError, load_run, store_run};
use crate::trace::EpisodeTrace;
use crate::wire::{ExternalEvaluator, ExternalPolicy};

pub const ANALYSIS_DIR: &str = "analysis";
pub const PRESETS: [&str; 6] = ["smoke", "run03", "run04", "run06", "run08", "run08-runway"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Scripted,
    External,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    #[default]
    Heuristic,
    External,
}

fn default_object_count() -> u8 {
    5
}

/// One row of the condition matrix: a condition run for each listed tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellPlan {
    pub condition: Condition,
    pub tiers: Vec<Tier>,
    pub episodes: u32,
    #[serde(default = "default_object_count")]
    pub object_count: u8,
    /// Appended to the tier name to form the agent label, e.g. `@50`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Activations the scripted base policy waits for before answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_activations: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_rounds: Option<u32>,
    #[serde(default)]
    pub overrides: RoleOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPlan {
    pub run_id: String,
    pub base_seed: u64,
    #[serde(default)]
    pub policy: PolicyKind,
    #[serde(default)]
    pub evaluator: EvaluatorKind,
    #[serde(default)]
    pub keep_prompts: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub cells: Vec<CellPlan>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("plan: {0}")]
    Plan(String),
    #[error("plan cell {cell} episode {episode}: {source}")]
    Episode { cell: usize, episode: u32, source: EnvError },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0} is not set")]
    MissingEndpoint(&'static str),
}

impl RunPlan {
    /// Parse a plan; unknown keys anywhere are rejected.
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let de = toml::Deserializer::new(text);
        let mut unknown = Vec::new();
        let plan: RunPlan = serde_ignored::deserialize(de, |p| unknown.push(p.to_string()))
            .map_err(|e| ExperimentError::Plan(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(ExperimentError::Plan(format!("unknown keys: {}", unknown.join(", "))));
        }
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ExperimentError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("plan serializes")
    }

    pub fn preset(name: &str) -> Option<RunPlan> {
        let hm = |tiers: &[Tier], episodes: u32, overrides: RoleOverrides| CellPlan {
            condition: Condition::HiddenModerator,
            tiers: tiers.to_vec(),
            episodes,
            object_count: 5,
            label: None,
            target_activations: None,
            verification_rounds: None,
            overrides,
        };
        let plan = |run_id: &str, base_seed: u64, cells: Vec<CellPlan>| RunPlan {
            run_id: run_id.into(),
            base_seed,
            policy: PolicyKind::Scripted,
            evaluator: EvaluatorKind::Heuristic,
            keep_prompts: false,
            output: None,
            cells,
        };
        let easy = |n: u32| RoleOverrides { switch_point: Some(n), ..Default::default() };
        let hard = |budget: u32| RoleOverrides {
            blickets: Some("AB".parse().expect("valid set")),
            switch_point: Some(3),
            post_switch_rule: Some(PostSwitchRule { rule_type: RuleType::Conjunctive, blickets: "CDE".parse().expect("valid set") }),
            step_budget: Some(budget),
            ..Default::default()
        };
        Some(match name {
            "smoke" => plan("smoke", 1, vec![hm(&[Tier::CgDb], 1, easy(3))]),
            "run03" => plan("run03", 137, vec![hm(&Tier::ALL, 30, easy(3))]),
            "run04" => plan("run04", 251, vec![hm(&Tier::ALL, 30, easy(3))]),
            "run06" => plan("run06", 306, vec![
                CellPlan { label: Some("@sw3".into()), ..hm(&Tier::ALL, 50, easy(3)) },
                CellPlan { label: Some("@sw5".into()), ..hm(&Tier::ALL, 50, easy(5)) },
            ]),
            "run08" => plan("run08", 800, vec![hm(&Tier::ALL, 50, hard(75))]),
            "run08-runway" => plan("run08-runway", 800, vec![
                hm(&Tier::ALL, 50, hard(75)),
                CellPlan { label: Some("@50".into()), ..hm(&[Tier::Base, Tier::CgDb], 25, hard(50)) },
            ]),
            _ => return None,
        })
    }

    /// Every episode of the plan, fully specified, in output order.
    pub fn resolve(&self, defaults: &ConditionDefaults) -> Result<Vec<PlannedEpisode>, ExperimentError> {
        if self.cells.is_empty() {
            return Err(ExperimentError::Plan("no cells".into()));
        }
        let mut out = Vec::new();
        for (ci, cell) in self.cells.iter().enumerate() {
            if cell.tiers.is_empty() {
                return Err(ExperimentError::Plan(format!("cell {ci} lists no tiers")));
            }
            for &tier in &cell.tiers {
                let agent = format!("{}{}", tier.name(), cell.label.as_deref().unwrap_or(""));
                if out.iter().any(|e: &PlannedEpisode| e.agent == agent && e.cell != ci) {
                    return Err(ExperimentError::Plan(format!("agent label {agent} is used by two cells")));
                }
                for i in 0..cell.episodes {
                    let seed = self.base_seed + u64::from(i);
                    let config = assign_roles_with(defaults, &cell.overrides, cell.condition, cell.object_count, seed)
                        .map_err(|source| ExperimentError::Episode { cell: ci, episode: i, source })?;
                    out.push(PlannedEpisode { cell: ci, tier, agent: agent.clone(), episode_index: i, config });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedEpisode {
    pub cell: usize,
    pub tier: Tier,
    pub agent: String,
    pub episode_index: u32,
    pub config: EpisodeConfig,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub workers: Option<usize>,
    pub policy_url: Option<String>,
    pub evaluator_url: Option<String>,
    pub timeout: Option<std::time::Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellTally {
    pub agent: String,
    pub episodes: usize,
    pub correct: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub tallies: Vec<CellTally>,
}

impl RunOutcome {
    /// Agents whose every episode aborted.
    pub fn failed_agents(&self) -> Vec<&str> {
        self.tallies.iter().filter(|t| t.episodes > 0 && t.aborted == t.episodes).map(|t| t.agent.as_str()).collect()
    }
}

fn make_policy(plan: &RunPlan, cell: &CellPlan, ep: &PlannedEpisode, opts: &RunOptions) -> Result<Box<dyn Policy>, ExperimentError> {
    Ok(match plan.policy {
        PolicyKind::External => {
            let url = opts.policy_url.clone().ok_or(ExperimentError::MissingEndpoint(crate::wire::POLICY_URL_ENV))?;
            Box::new(ExternalPolicy::new(url, opts.timeout.unwrap_or(crate::wire::DEFAULT_TIMEOUT)))
        }
        PolicyKind::Scripted => {
            let n = ep.config.object_count;
            let rounds = cell.verification_rounds.unwrap_or(3);
            match ep.tier {
                Tier::Base => Box::new(BasePolicy::new(n, cell.target_activations.unwrap_or(3))),
                Tier::Cg => Box::new(GraphPolicy::new(n, rounds, false)),
                Tier::CgDb => Box::new(GraphPolicy::new(n, rounds, true)),
            }
        }
    })
}

/// Execute every episode of `plan` and store the run under `dir`.
pub fn cmd_run(plan: &RunPlan, dir: &Path, opts: &RunOptions) -> Result<RunOutcome, ExperimentError> {
    let defaults = ConditionDefaults::shipped();
    let episodes = plan.resolve(&defaults)?;
    let evaluator: Box<dyn TriggerEvaluator> = match plan.evaluator {
        EvaluatorKind::Heuristic => Box::new(HeuristicEvaluator),
        EvaluatorKind::External => {
            let url = opts.evaluator_url.clone().ok_or(ExperimentError::MissingEndpoint(crate::wire::EVALUATOR_URL_ENV))?;
            Box::new(ExternalEvaluator::new(url, opts.timeout.unwrap_or(crate::wire::DEFAULT_TIMEOUT)))
        }
    };
    // Fail on configuration problems before anything runs.
    for ep in &episodes {
        make_policy(plan, &plan.cells[ep.cell], ep, opts)?;
    }
    let run_one = |ep: &PlannedEpisode| -> Result<(EpisodeTrace, Option<Vec<String>>), ExperimentError> {
        let cell = &plan.cells[ep.cell];
        let mut policy = make_policy(plan, cell, ep, opts)?;
        let scaffolding = Scaffolding::shipped(ep.tier).with_agent(ep.agent.clone());
        let options = EpisodeOptions { episode_index: ep.episode_index, keep_prompts: plan.keep_prompts };
        let out = run_episode(&ep.config, &scaffolding, policy.as_mut(), evaluator.as_ref(), &options)?;
        Ok((out.trace, out.prompts))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(|e| ExperimentError::Plan(e.to_string()))?;
    let results: Vec<(EpisodeTrace, Option<Vec<String>>)> =
        pool.install(|| episodes.par_iter().map(run_one).collect::<Result<Vec<_>, _>>())?;
    let (traces, prompts): (Vec<EpisodeTrace>, Vec<Option<Vec<String>>>) = results.into_iter().unzip();

    let plan_value = serde_json::to_value(plan).ok();
    let manifest = store_run(dir, &plan.run_id, plan_value, &traces, plan.keep_prompts.then_some(prompts.as_slice()))?;

    let mut tallies: Vec<CellTally> = Vec::new();
    for t in &traces {
        let i = match tallies.iter().position(|x| x.agent == t.scaffolding.agent) {
            Some(i) => i,
            None => {
                tallies.push(CellTally { agent: t.scaffolding.agent.clone(), episodes: 0, correct: 0, aborted: 0 });
                tallies.len() - 1
            }
        };
        tallies[i].episodes += 1;
        tallies[i].correct += usize::from(t.correct());
        tallies[i].aborted += usize::from(t.aborted);
    }
    Ok(RunOutcome { dir: dir.to_path_buf(), manifest, tallies })
}

/// Load a stored run, compute the analysis and write report files to
/// `<dir>/analysis/`.
pub fn cmd_analyze(dir: &Path, strict: bool) -> Result<(Analysis, Vec<PathBuf>), ExperimentError> {
    let (_, traces) = load_run(dir, strict)?;
    let analysis = analyze(&traces)?;
    let out_dir = dir.join(ANALYSIS_DIR);
    std::fs::create_dir_all(&out_dir).map_err(|source| ExperimentError::Io { path: out_dir.display().to_string(), source })?;
    let mut written = Vec::new();
    for (name, text) in report_files(&analysis) {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|source| ExperimentError::Io { path: path.display().to_string(), source })?;
        written.push(path);
    }
    Ok((analysis, written))
}

/// Recompute every reference statistic and compare at the table tolerance.
/// Uses the shipped table unless a path is given.
pub fn cmd_verify_stats(path: Option<&Path>) -> Result<(ReferenceTable, RegressionReport), ReferenceError> {
    let table = match path {
        Some(p) => ReferenceTable::load(p)?,
        None => ReferenceTable::shipped(),
    };
    let report = table.verify()?;
    Ok((table, report))
}
