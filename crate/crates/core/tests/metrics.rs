use blicket_core::environment::grade;
use blicket_core::fixtures::{detection_fixture, run08_fixture};
use blicket_core::harness::Tier;
use blicket_core::metrics::*;
use blicket_core::monitor::BehaviorId;

#[test]
fn run08_cells() {
    let traces = run08_fixture().unwrap();
    let s = summarize_run(&traces).unwrap();
    let by = |t: Tier| s.iter().find(|x| x.tier == t).unwrap();
    let cg = by(Tier::Cg);
    assert_eq!((cg.exactly_n_count, cg.re_count, cg.re_correct), (14, 33, 31));
    assert!((cg.exactly_n_rate.unwrap() - 0.28).abs() < 1e-12);
    assert!((cg.re_accuracy.unwrap() - 31.0 / 33.0).abs() < 1e-12);
    assert_eq!(by(Tier::Base).raw_correct, 35);
    assert_eq!(by(Tier::CgDb).raw_correct, 45);
    assert!((by(Tier::Base).switch_rate_reached.unwrap() - 0.74).abs() < 1e-12);
    assert!((cg.switch_rate_reached.unwrap() - 0.94).abs() < 1e-12);

    let tax = error_taxonomy(&traces);
    let base = tax.iter().find(|r| r.agent == "base").unwrap();
    assert_eq!((base.total_errors, base.exactly_n_errors, base.re_errors, base.re_over_inclusion), (15, 7, 8, 8));
    assert!(tax.iter().all(|r| r.exactly_n_matches_pre_switch == Some(true)));
    // cross-check each error against a fresh grade of the submitted answer
    for t in traces.iter().filter(|t| !t.correct()) {
        if let (Some(a), Some(v)) = (&t.final_answer, &t.verdict) {
            assert_eq!(&grade(&v.graded_against, a), v);
        }
    }
}

#[test]
fn detection_totals() {
    let d = detection_stats(&detection_fixture().unwrap(), BehaviorId::RuleChangeHypothesis);
    assert_eq!((d.switched_episodes, d.firings, d.true_positives, d.false_positives, d.false_negatives), (157, 136, 132, 4, 0));
    assert_eq!(d.sensitivity, Some(1.0));
    assert!((d.ppv.unwrap() - 0.9706).abs() < 5e-4);
}
