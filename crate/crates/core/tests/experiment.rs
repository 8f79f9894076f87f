use std::fs;
use std::path::Path;

use blicket_core::experiment::*;
use blicket_core::fixtures::run08_fixture;
use blicket_core::store::{load_run, store_run, StoreError};

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn bless_or_compare(name: &str, actual: &str) {
    if std::env::var_os("BLESS").is_some() {
        fs::write(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name), actual).unwrap();
    }
    assert_eq!(actual, golden(name), "golden file {name} differs");
}

#[test]
fn run08_fixture_analysis_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let traces = run08_fixture().unwrap();
    store_run(dir.path(), "run08-fixture", None, &traces, None).unwrap();
    let (analysis, files) = cmd_analyze(dir.path(), true).unwrap();
    assert_eq!(analysis.episodes, 150);
    assert_eq!(files.len(), 6);
    bless_or_compare("run08_summary.txt", &fs::read_to_string(dir.path().join("analysis/summary.txt")).unwrap());
    bless_or_compare("run08_summary.csv", &fs::read_to_string(dir.path().join("analysis/summary.csv")).unwrap());
}

#[test]
fn smoke_plan_writes_one_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_run(&RunPlan::preset("smoke").unwrap(), dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(out.manifest.episode_count, 1);
    assert_eq!(fs::read_dir(dir.path().join("traces")).unwrap().count(), 1);
    assert!(out.failed_agents().is_empty());
}

#[test]
fn run08_plan_writes_150_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_run(&RunPlan::preset("run08").unwrap(), dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(out.manifest.episode_count, 150);
    assert_eq!(fs::read_dir(dir.path().join("traces")).unwrap().count(), 150);
    let (_, traces) = load_run(dir.path(), true).unwrap();
    assert!(traces.iter().all(|t| t.config.step_budget == 75));
}

#[test]
fn unknown_condition_is_a_plan_error() {
    let text = RunPlan::preset("smoke").unwrap().to_toml().replace("hidden_moderator", "hidden_mediator");
    assert!(matches!(RunPlan::from_toml(&text), Err(ExperimentError::Plan(_))));
    let text = RunPlan::preset("smoke").unwrap().to_toml() + "\nbogus = 1\n";
    assert!(matches!(RunPlan::from_toml(&text), Err(ExperimentError::Plan(_))));
}

#[test]
fn presets_round_trip_through_toml() {
    for name in PRESETS {
        let plan = RunPlan::preset(name).unwrap();
        assert_eq!(RunPlan::from_toml(&plan.to_toml()).unwrap(), plan, "{name}");
    }
}

#[test]
fn empty_run_reports_no_episodes() {
    let dir = tempfile::tempdir().unwrap();
    store_run(dir.path(), "empty", None, &[], None).unwrap();
    cmd_analyze(dir.path(), true).unwrap();
    let text = fs::read_to_string(dir.path().join("analysis/summary.txt")).unwrap();
    assert_eq!(text, "No episodes in this run.\n");
}

#[test]
fn mixed_schema_names_offending_file() {
    let dir = tempfile::tempdir().unwrap();
    let traces = run08_fixture().unwrap();
    let manifest = store_run(dir.path(), "mixed", None, &traces[..3], None).unwrap();
    let victim = &manifest.episodes[1].file;
    let path = dir.path().join(victim);
    let text = fs::read_to_string(&path).unwrap().replacen("\"schema_version\": \"1.0\"", "\"schema_version\": \"2.0\"", 1);
    fs::write(&path, text).unwrap();
    match cmd_analyze(dir.path(), true) {
        Err(ExperimentError::Store(StoreError::Trace { file, .. })) => assert_eq!(&file, victim),
        other => panic!("expected a trace error, got {other:?}"),
    }
}

#[test]
fn verify_stats_missing_file_is_distinct() {
    let err = cmd_verify_stats(Some(Path::new("/nonexistent/reference.toml"))).unwrap_err();
    assert!(matches!(err, blicket_core::reference::ReferenceError::Io { .. }));
}
