use std::fs;
use std::path::Path;

use blicket_core::graph::{base_graph, RenderedGraph, TransitionOutcome};
use blicket_core::monitor::{BehaviorId, BehaviorSet};
use proptest::prelude::*;

fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("BLESS").is_some() {
        fs::write(&path, actual).unwrap();
    }
    assert_eq!(actual, fs::read_to_string(path).unwrap(), "golden file {name} differs");
}

#[test]
fn base_render_matches_golden() {
    golden("render_base.txt", &base_graph().render());
}

#[test]
fn patched_render_matches_golden() {
    let set = BehaviorSet::shipped();
    let mut g = base_graph();
    for (step, id) in [(6, BehaviorId::ExplorationStagnation), (12, BehaviorId::RuleChangeHypothesis)] {
        assert!(g.apply_modification(&set.spec(id).unwrap().patch, step).unwrap());
    }
    assert!(g.violations().is_empty());
    golden("render_patched.txt", &g.render());
    let parsed = RenderedGraph::parse(&g.render()).unwrap();
    assert_eq!(parsed.current, "INITIAL_EXPLORATION");
    assert_eq!(parsed.overview.len(), 6);
}

#[test]
fn every_patch_order_keeps_graph_valid() {
    let set = BehaviorSet::shipped();
    let ids = BehaviorId::ALL;
    // all 24 orders of the four patches
    let mut perms = vec![vec![]];
    for _ in 0..ids.len() {
        perms = perms
            .into_iter()
            .flat_map(|p: Vec<BehaviorId>| {
                ids.iter().filter(|i| !p.contains(i)).map(|i| [p.clone(), vec![*i]].concat()).collect::<Vec<_>>()
            })
            .collect();
    }
    assert_eq!(perms.len(), 24);
    for order in perms {
        let mut g = base_graph();
        for (k, id) in order.iter().enumerate() {
            g.apply_modification(&set.spec(*id).unwrap().patch, k as u32 + 1).unwrap();
        }
        assert!(g.violations().is_empty(), "{order:?}");
        assert!(g.pending_edges().is_empty(), "{order:?}");
        assert_eq!(g.states().len(), 8);
        let edges: Vec<_> = g.edges().iter().map(|e| (e.from.clone(), e.to.clone())).collect();
        let mut reference = base_graph();
        for id in ids {
            reference.apply_modification(&set.spec(id).unwrap().patch, 1).unwrap();
        }
        let mut a = edges.clone();
        a.sort();
        let mut b: Vec<_> = reference.edges().iter().map(|e| (e.from.clone(), e.to.clone())).collect();
        b.sort();
        assert_eq!(a, b, "{order:?}");
    }
}

proptest! {
    #[test]
    fn transitions_follow_edges(targets in proptest::collection::vec(0usize..6, 1..30)) {
        let names = ["INITIAL_EXPLORATION", "COMBINATION_TESTING", "HYPOTHESIS_EVALUATION", "VERIFICATION", "NOWHERE", "ORDER_TESTING"];
        let mut g = base_graph();
        for (step, t) in targets.into_iter().enumerate() {
            let before = g.current().to_string();
            let allowed = g.has_edge(&before, names[t]);
            let outcome = g.validate_transition(names[t], step as u32 + 1);
            prop_assert_eq!(matches!(outcome, TransitionOutcome::Accepted), allowed);
            prop_assert_eq!(g.current(), if allowed { names[t] } else { before.as_str() });
        }
        prop_assert_eq!(g.transition_log().len(), g.transition_log().iter().filter(|e| e.step > 0).count());
    }
}
