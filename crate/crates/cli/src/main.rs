//! `blicket` command-line front-end: run plans, analyze stored runs, check
//! the statistics engine against its reference table, and dump the shipped
//! configuration.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use blicket_core::defaults::ConditionDefaults;
use blicket_core::experiment::{cmd_analyze, cmd_run, cmd_verify_stats, RunOptions, RunPlan, PRESETS};
use blicket_core::graph::BASE_GRAPH;
use blicket_core::monitor::SHIPPED_BEHAVIORS;
use blicket_core::prompt::TASK_DESCRIPTION;
use blicket_core::reference::SHIPPED_REFERENCE;
use blicket_core::report::render_text;
use blicket_core::wire::{EVALUATOR_URL_ENV, POLICY_URL_ENV};

#[derive(Parser)]
#[command(name = "blicket", version, about = "Extended blicket benchmark runner and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run plan and store its traces.
    Run(RunArgs),
    /// Summarize a stored run and write report files to <DIR>/analysis.
    Analyze {
        dir: PathBuf,
        /// Reject traces with unknown fields.
        #[arg(long)]
        strict: bool,
    },
    /// Recompute the reference statistics and compare them at the table tolerance.
    VerifyStats {
        /// Reference table to check instead of the shipped one.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Print a shipped configuration document or a preset plan.
    PrintConfig {
        #[arg(value_enum)]
        what: ConfigKind,
        /// Preset to print when WHAT is `plan`.
        #[arg(long, default_value = "smoke")]
        preset: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigKind {
    Defaults,
    Graph,
    Behaviors,
    Reference,
    Task,
    Plan,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Plan file (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    plan: Option<PathBuf>,
    /// Built-in plan.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Output directory; defaults to the plan's `output` or runs/<run_id>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the plan's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, env = POLICY_URL_ENV)]
    policy_url: Option<String>,
    #[arg(long, env = EVALUATOR_URL_ENV)]
    evaluator_url: Option<String>,
    /// Per-request timeout for external endpoints, in seconds.
    #[arg(long)]
    timeout: Option<u64>,
    /// Store the full prompt text of every step.
    #[arg(long)]
    keep_prompts: bool,
    /// Skip the analysis pass after the run.
    #[arg(long)]
    no_analyze: bool,
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut plan = match (&args.plan, &args.preset) {
        (Some(path), _) => RunPlan::load(path)?,
        (None, Some(name)) => RunPlan::preset(name).with_context(|| format!("unknown preset {name}"))?,
        (None, None) => bail!("one of --plan or --preset is required"),
    };
    if let Some(seed) = args.seed {
        plan.base_seed = seed;
    }
    plan.keep_prompts |= args.keep_prompts;
    let dir = args
        .out
        .or_else(|| plan.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&plan.run_id));
    let opts = RunOptions {
        workers: args.workers,
        policy_url: args.policy_url,
        evaluator_url: args.evaluator_url,
        timeout: args.timeout.map(Duration::from_secs),
    };
    let outcome = cmd_run(&plan, &dir, &opts)?;
    println!("stored {} episodes in {}", outcome.manifest.episode_count, dir.display());
    for t in &outcome.tallies {
        println!("  {:<16} {:>4} episodes  {:>4} correct  {:>4} aborted", t.agent, t.episodes, t.correct, t.aborted);
    }
    if !args.no_analyze {
        let (analysis, _) = cmd_analyze(&dir, true)?;
        print!("\n{}", render_text(&analysis));
    }
    let failed = outcome.failed_agents();
    if !failed.is_empty() {
        eprintln!("every episode aborted for: {}", failed.join(", "));
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(reference: Option<PathBuf>) -> Result<ExitCode> {
    let (table, report) = cmd_verify_stats(reference.as_deref())?;
    let failed: std::collections::BTreeSet<&str> = report.failures.iter().map(|f| f.key.as_str()).collect();
    let recomputed = table.recompute()?;
    for e in &table.entries {
        let got = recomputed[&e.key];
        let mark = if failed.contains(e.key.as_str()) { "FAIL" } else { "ok" };
        println!("{mark:<4} {:<56} reference {:<14.8} recomputed {:<14.8}", e.key, e.value, got);
    }
    println!("{} checked, {} failed at tolerance {}", report.checked, report.failures.len(), report.tolerance);
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn print_config(what: ConfigKind, preset: &str) -> Result<()> {
    let text = match what {
        ConfigKind::Defaults => ConditionDefaults::shipped_text().to_string(),
        ConfigKind::Graph => BASE_GRAPH.to_string(),
        ConfigKind::Behaviors => SHIPPED_BEHAVIORS.to_string(),
        ConfigKind::Reference => SHIPPED_REFERENCE.to_string(),
        ConfigKind::Task => TASK_DESCRIPTION.to_string(),
        ConfigKind::Plan => RunPlan::preset(preset).with_context(|| format!("unknown preset {preset}"))?.to_toml(),
    };
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Analyze { dir, strict } => cmd_analyze(&dir, strict).map(|(a, files)| {
            print!("{}", render_text(&a));
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }).map_err(Into::into),
        Command::VerifyStats { reference } => verify(reference),
        Command::PrintConfig { what, preset } => print_config(what, &preset).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
