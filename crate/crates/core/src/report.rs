//! Plain-text and CSV report emitters.
//!
//! Numbers are printed with fixed precision so that reports are
//! byte-stable for identical inputs.

use std::fmt::Write as _;

use serde::Serialize;

use crate::harness::Tier;
use crate::metrics::{
    AgentErrors, Category, DetectionStats, RunSummary, decomposition, detection_stats, error_taxonomy, summarize_run,
    MetricsError,
};
use crate::monitor::BehaviorId;
use crate::stats::{ContingencyTable, Sided, cohens_h, fisher_exact, odds_ratio_ci};
use crate::trace::EpisodeTrace;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentDetection {
    pub agent: String,
    pub behavior: BehaviorId,
    pub stats: DetectionStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub metric: &'static str,
    pub first: String,
    pub second: String,
    pub table: ContingencyTable,
    pub fisher_two_sided: Option<f64>,
    pub fisher_one_tailed: Option<f64>,
    pub cohens_h: Option<f64>,
    pub odds_ratio: Option<(f64, f64, f64)>,
}

/// Everything `analyze` emits, computed from traces alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub episodes: usize,
    pub summaries: Vec<RunSummary>,
    pub decomposition: Vec<(String, Category, bool, usize)>,
    pub detection: Vec<AgentDetection>,
    pub errors: Vec<AgentErrors>,
    pub comparisons: Vec<Comparison>,
}

fn compare(metric: &'static str, a: &RunSummary, b: &RunSummary, k1: usize, n1: usize, k2: usize, n2: usize) -> Option<Comparison> {
    if n1 == 0 || n2 == 0 {
        return None;
    }
    let table = ContingencyTable::from_rates(k1 as u64, n1 as u64, k2 as u64, n2 as u64).ok()?;
    let or = odds_ratio_ci(&table, 0.95).ok().map(|r| (r.odds_ratio, r.lower, r.upper));
    Some(Comparison {
        metric,
        first: a.agent.clone(),
        second: b.agent.clone(),
        table,
        fisher_two_sided: fisher_exact(&table, Sided::TwoSided).ok(),
        fisher_one_tailed: fisher_exact(&table, Sided::OneTailedGreater).ok(),
        cohens_h: table.rates().and_then(|(p1, p2)| cohens_h(p1, p2).ok()),
        odds_ratio: or,
    })
}

pub fn analyze(traces: &[EpisodeTrace]) -> Result<Analysis, MetricsError> {
    let summaries = summarize_run(traces)?;
    let decomposition = decomposition(traces).into_iter().map(|((a, c, ok), n)| (a, c, ok, n)).collect();
    let mut detection = Vec::new();
    for s in summaries.iter().filter(|s| s.tier == Tier::CgDb) {
        let group: Vec<EpisodeTrace> = traces.iter().filter(|t| t.scaffolding.agent == s.agent).cloned().collect();
        for behavior in BehaviorId::ALL {
            detection.push(AgentDetection { agent: s.agent.clone(), behavior, stats: detection_stats(&group, behavior) });
        }
    }
    let mut comparisons = Vec::new();
    for (i, a) in summaries.iter().enumerate() {
        for b in &summaries[i + 1..] {
            if a.condition != b.condition {
                continue;
            }
            comparisons.extend(compare("raw_accuracy", a, b, a.raw_correct, a.n, b.raw_correct, b.n));
            if a.re_accuracy.is_some() || b.re_accuracy.is_some() {
                comparisons.extend(compare("re_accuracy", a, b, a.re_correct, a.re_count, b.re_correct, b.re_count));
                comparisons.extend(compare("exactly_n_rate", a, b, a.exactly_n_count, a.n, b.exactly_n_count, b.n));
            }
        }
    }
    Ok(Analysis { episodes: traces.len(), summaries, decomposition, detection, errors: error_taxonomy(traces), comparisons })
}

// ---------------------------------------------------------------------------
// Formatting helpers

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}%", 100.0 * x)).unwrap_or_else(|| "n/a".into())
}

fn frac(k: usize, n: usize) -> String {
    if n == 0 { "n/a".into() } else { format!("{:.1}% ({k}/{n})", 100.0 * k as f64 / n as f64) }
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// p-values to four significant figures.
fn pval(v: Option<f64>) -> String {
    match v {
        None => "n/a".into(),
        Some(p) if p >= 0.9995 => "1.000".into(),
        Some(0.0) => "0".into(),
        Some(p) => {
            let digits = (3 - p.log10().floor() as i32).max(0) as usize;
            format!("{p:.digits$}")
        }
    }
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    let _ = writeln!(out, "{}", line(header.to_vec()));
    let _ = writeln!(out, "{}", line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(|s| s.as_str()).collect()));
    for r in rows {
        let _ = writeln!(out, "{}", line(r.iter().map(|s| s.as_str()).collect()));
    }
}

fn csv_line(cells: &[String]) -> String {
    let escaped: Vec<String> = cells
        .iter()
        .map(|c| if c.contains([',', '"', '\n']) { format!("\"{}\"", c.replace('"', "\"\"")) } else { c.clone() })
        .collect();
    escaped.join(",") + "\n"
}

// ---------------------------------------------------------------------------
// Text

pub fn render_text(a: &Analysis) -> String {
    let mut out = String::new();
    if a.episodes == 0 {
        out.push_str("No episodes in this run.\n");
        return out;
    }
    let _ = writeln!(out, "Episodes: {}\n", a.episodes);

    out.push_str("== Run summary ==\n");
    let rows: Vec<Vec<String>> = a
        .summaries
        .iter()
        .map(|s| {
            vec![
                s.agent.clone(),
                s.condition.to_string(),
                s.n.to_string(),
                frac(s.raw_correct, s.n),
                frac(s.re_count, if s.re_rate.is_some() { s.n } else { 0 }),
                if s.re_rate.is_some() { frac(s.re_correct, s.re_count) } else { "n/a".into() },
                frac(s.exactly_n_count, if s.exactly_n_rate.is_some() { s.n } else { 0 }),
                pct(s.answer_rate),
                pct(s.switch_rate_reached),
                pct(s.switch_rate_observed),
            ]
        })
        .collect();
    table(
        &mut out,
        &["agent", "condition", "n", "raw accuracy", "RE episode rate", "RE accuracy", "exactly-N rate", "answer rate", "switch rate", "switch+observed"],
        &rows,
    );

    out.push_str("\n== Steps and parsing ==\n");
    let rows: Vec<Vec<String>> = a
        .summaries
        .iter()
        .map(|s| {
            let d = |x: &Option<crate::metrics::Distribution>| {
                x.as_ref().map(|d| format!("{:.1} / {:.1} [{:.0}-{:.0}]", d.mean, d.median, d.min, d.max)).unwrap_or_else(|| "n/a".into())
            };
            vec![s.agent.clone(), d(&s.steps_taken), d(&s.steps_to_first_activation), s.parse_failures.to_string(), pct(s.parse_failure_rate), s.aborted.to_string()]
        })
        .collect();
    table(&mut out, &["agent", "steps mean / median [range]", "first activation", "parse failures", "parse failure rate", "aborted"], &rows);

    out.push_str("\n== Error breakdown ==\n");
    let rows: Vec<Vec<String>> = a
        .summaries
        .iter()
        .map(|s| {
            let e = &s.errors;
            vec![s.agent.clone(), e.rule_type.to_string(), e.over_inclusion.to_string(), e.under_inclusion.to_string(), e.mixed.to_string(), e.unanswered.to_string()]
        })
        .collect();
    table(&mut out, &["agent", "rule type", "over-inclusion", "under-inclusion", "mixed", "unanswered"], &rows);

    out.push_str("\n== Classification ==\n");
    let rows: Vec<Vec<String>> =
        a.decomposition.iter().map(|(agent, c, ok, n)| vec![agent.clone(), c.name().into(), if *ok { "correct" } else { "wrong" }.into(), n.to_string()]).collect();
    table(&mut out, &["agent", "category", "outcome", "episodes"], &rows);

    if !a.detection.is_empty() {
        out.push_str("\n== Detection ==\n");
        let rows: Vec<Vec<String>> = a
            .detection
            .iter()
            .map(|d| {
                let s = &d.stats;
                vec![
                    d.agent.clone(),
                    d.behavior.short().into(),
                    s.switched_episodes.to_string(),
                    s.firings.to_string(),
                    s.true_positives.to_string(),
                    s.false_positives.to_string(),
                    s.false_negatives.to_string(),
                    pct(s.sensitivity),
                    pct(s.ppv),
                ]
            })
            .collect();
        table(&mut out, &["agent", "behavior", "switched", "firings", "TP", "FP", "FN", "sensitivity", "PPV"], &rows);
    }

    out.push_str("\n== Errors ==\n");
    if a.errors.is_empty() {
        out.push_str("No errors.\n");
    } else {
        let rows: Vec<Vec<String>> = a
            .errors
            .iter()
            .map(|e| {
                let mut detail: Vec<String> = Vec::new();
                for (label, k) in [("over-inclusion", e.re_over_inclusion), ("under-inclusion", e.re_under_inclusion), ("mixed", e.re_mixed), ("rule type", e.re_rule_type), ("unanswered", e.re_unanswered)] {
                    if k > 0 {
                        detail.push(format!("{k}x {label}"));
                    }
                }
                vec![
                    e.agent.clone(),
                    e.total_errors.to_string(),
                    e.exactly_n_errors.to_string(),
                    e.re_errors.to_string(),
                    e.pre_switch_errors.to_string(),
                    e.other_errors.to_string(),
                    match e.exactly_n_matches_pre_switch {
                        Some(true) => "yes".into(),
                        Some(false) => "no".into(),
                        None => "n/a".into(),
                    },
                    detail.join(", "),
                ]
            })
            .collect();
        table(&mut out, &["agent", "total", "exactly-N", "RE", "pre-switch", "other", "exactly-N = pre-switch set", "RE detail"], &rows);
    }

    if !a.comparisons.is_empty() {
        out.push_str("\n== Comparisons ==\n");
        let rows: Vec<Vec<String>> = a
            .comparisons
            .iter()
            .map(|c| {
                let t = c.table;
                vec![
                    c.metric.into(),
                    format!("{} vs {}", c.first, c.second),
                    format!("{}/{} vs {}/{}", t.a, t.a + t.b, t.c, t.c + t.d),
                    pval(c.fisher_two_sided),
                    pval(c.fisher_one_tailed),
                    c.cohens_h.map(|h| format!("{h:.3}")).unwrap_or_else(|| "n/a".into()),
                    c.odds_ratio.map(|(o, l, u)| format!("{o:.2} [{l:.2}, {u:.2}]")).unwrap_or_else(|| "n/a".into()),
                ]
            })
            .collect();
        table(&mut out, &["metric", "agents", "counts", "Fisher p (two-sided)", "p (one-tailed)", "Cohen's h", "OR [95% CI]"], &rows);
    }
    out
}

// ---------------------------------------------------------------------------
// CSV

pub fn summary_csv(a: &Analysis) -> String {
    let mut out = csv_line(
        &[
            "agent", "tier", "condition", "n", "raw_correct", "raw_accuracy", "answered", "answer_rate", "aborted",
            "switch_rate_reached", "switch_rate_observed", "pre_switch_count", "pre_switch_correct", "exactly_n_count",
            "exactly_n_correct", "exactly_n_rate", "re_count", "re_correct", "re_rate", "re_accuracy", "steps_mean",
            "steps_median", "first_activation_mean", "parse_failures", "parse_failure_rate", "err_rule_type",
            "err_over_inclusion", "err_under_inclusion", "err_mixed", "err_unanswered",
        ]
        .map(String::from),
    );
    for s in &a.summaries {
        out.push_str(&csv_line(&[
            s.agent.clone(),
            s.tier.name().into(),
            s.condition.to_string(),
            s.n.to_string(),
            s.raw_correct.to_string(),
            num(s.raw_accuracy),
            s.answered.to_string(),
            num(s.answer_rate),
            s.aborted.to_string(),
            num(s.switch_rate_reached),
            num(s.switch_rate_observed),
            s.pre_switch_count.to_string(),
            s.pre_switch_correct.to_string(),
            s.exactly_n_count.to_string(),
            s.exactly_n_correct.to_string(),
            num(s.exactly_n_rate),
            s.re_count.to_string(),
            s.re_correct.to_string(),
            num(s.re_rate),
            num(s.re_accuracy),
            num(s.steps_taken.as_ref().map(|d| d.mean)),
            num(s.steps_taken.as_ref().map(|d| d.median)),
            num(s.steps_to_first_activation.as_ref().map(|d| d.mean)),
            s.parse_failures.to_string(),
            num(s.parse_failure_rate),
            s.errors.rule_type.to_string(),
            s.errors.over_inclusion.to_string(),
            s.errors.under_inclusion.to_string(),
            s.errors.mixed.to_string(),
            s.errors.unanswered.to_string(),
        ]));
    }
    out
}

pub fn decomposition_csv(a: &Analysis) -> String {
    let mut out = csv_line(&["agent", "category", "correct", "episodes"].map(String::from));
    for (agent, c, ok, n) in &a.decomposition {
        out.push_str(&csv_line(&[agent.clone(), c.name().into(), ok.to_string(), n.to_string()]));
    }
    out
}

pub fn detection_csv(a: &Analysis) -> String {
    let mut out = csv_line(
        &["agent", "behavior", "episodes", "switched", "firings", "tp", "fp", "fn", "sensitivity", "ppv"].map(String::from),
    );
    for d in &a.detection {
        let s = &d.stats;
        out.push_str(&csv_line(&[
            d.agent.clone(),
            d.behavior.name().into(),
            s.episodes.to_string(),
            s.switched_episodes.to_string(),
            s.firings.to_string(),
            s.true_positives.to_string(),
            s.false_positives.to_string(),
            s.false_negatives.to_string(),
            num(s.sensitivity),
            num(s.ppv),
        ]));
    }
    out
}

pub fn errors_csv(a: &Analysis) -> String {
    let mut out = csv_line(
        &["agent", "episode_index", "category", "claimed", "truth", "rule_type_error", "object_set_error"].map(String::from),
    );
    for e in &a.errors {
        for d in &e.details {
            out.push_str(&csv_line(&[
                e.agent.clone(),
                d.episode_index.to_string(),
                d.category.name().into(),
                d.claimed.map(|c| c.to_string()).unwrap_or_else(|| "none".into()),
                d.truth.to_string(),
                d.rule_type_error.to_string(),
                d.object_set_error.map(|o| format!("{o:?}")).unwrap_or_else(|| "unanswered".into()),
            ]));
        }
    }
    out
}

pub fn comparisons_csv(a: &Analysis) -> String {
    let mut out = csv_line(
        &["metric", "first", "second", "a", "b", "c", "d", "fisher_two_sided", "fisher_one_tailed", "cohens_h", "odds_ratio", "or_lower", "or_upper"]
            .map(String::from),
    );
    for c in &a.comparisons {
        let t = c.table;
        out.push_str(&csv_line(&[
            c.metric.into(),
            c.first.clone(),
            c.second.clone(),
            t.a.to_string(),
            t.b.to_string(),
            t.c.to_string(),
            t.d.to_string(),
            num(c.fisher_two_sided),
            num(c.fisher_one_tailed),
            num(c.cohens_h),
            num(c.odds_ratio.map(|o| o.0)),
            num(c.odds_ratio.map(|o| o.1)),
            num(c.odds_ratio.map(|o| o.2)),
        ]));
    }
    out
}

/// File name and contents of every report `analyze` writes.
pub fn report_files(a: &Analysis) -> Vec<(&'static str, String)> {
    vec![
        ("summary.txt", render_text(a)),
        ("summary.csv", summary_csv(a)),
        ("decomposition.csv", decomposition_csv(a)),
        ("detection.csv", detection_csv(a)),
        ("errors.csv", errors_csv(a)),
        ("comparisons.csv", comparisons_csv(a)),
    ]
}
