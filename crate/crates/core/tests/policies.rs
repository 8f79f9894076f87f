use blicket_core::environment::{assign_roles, Condition};
use blicket_core::harness::{run_episode, EpisodeOptions, Scaffolding, Tier};
use blicket_core::monitor::{BehaviorId, HeuristicEvaluator};
use blicket_core::policies::{BasePolicy, GraphPolicy};
use blicket_core::trace::EpisodeTrace;

fn run(condition: Condition, tier: Tier, seed: u64) -> EpisodeTrace {
    let config = assign_roles(condition, 5, seed).unwrap();
    let mut policy: Box<dyn blicket_core::harness::Policy> = match tier {
        Tier::Base => Box::new(BasePolicy::new(5, 3)),
        Tier::Cg => Box::new(GraphPolicy::cg(5)),
        Tier::CgDb => Box::new(GraphPolicy::cg_db(5)),
    };
    let out = run_episode(&config, &Scaffolding::shipped(tier), policy.as_mut(), &HeuristicEvaluator, &EpisodeOptions::default()).unwrap();
    out.trace
}

#[test]
fn graph_policy_solves_order_free_conditions() {
    for condition in [Condition::Conjunctive, Condition::Disjunctive] {
        for seed in 0..10 {
            let t = run(condition, Tier::Cg, seed);
            assert!(t.correct(), "{condition} seed {seed}: {:?} vs {:?}", t.final_answer, t.config.blickets);
        }
    }
}

#[test]
fn cg_db_recovers_after_switch() {
    let mut db4 = 0;
    let mut correct = 0;
    for seed in 0..10 {
        let t = run(Condition::HiddenModerator, Tier::CgDb, seed);
        assert!(t.switched, "seed {seed}");
        db4 += usize::from(t.fired(BehaviorId::RuleChangeHypothesis));
        correct += usize::from(t.correct());
    }
    assert_eq!(db4, 10);
    assert!(correct >= 9, "{correct}");
}

#[test]
fn base_policy_stops_at_target() {
    for seed in 0..10 {
        let t = run(Condition::HiddenModerator, Tier::Base, seed);
        assert_eq!(t.activation_count_final, 3, "seed {seed}");
        assert!(t.switched);
        assert!(!t.correct());
    }
}

#[test]
fn traces_round_trip() {
    for tier in Tier::ALL {
        let t = run(Condition::HiddenModerator, tier, 3);
        let back = EpisodeTrace::from_json(&t.to_json(), true).unwrap();
        assert_eq!(back, t);
    }
}
