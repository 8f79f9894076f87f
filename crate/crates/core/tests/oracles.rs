//! Independent oracles for the environment and the statistics engine.

use blicket_core::environment::{
    evaluate_rule, grade, Answer, Detector, ObjectSetError, Placement, RuleSpec, RuleType,
};
use blicket_core::objects::{ObjectId, ObjectSet};
use blicket_core::stats::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Environment

fn permutations(items: &[ObjectId]) -> Vec<Vec<ObjectId>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// Every ordered placement sequence of distinct objects.
fn placements(n: u8) -> Vec<Vec<ObjectId>> {
    ObjectSet::universe(n).subsets().into_iter().flat_map(|s| permutations(&s.to_vec())).collect()
}

/// Truth-table oracle: the base rule over the set of present objects, and
/// for an order constraint, the placement sequence restricted to the
/// constrained objects must equal the constraint.
fn oracle(rule_type: RuleType, blickets: &[ObjectId], order: Option<&[ObjectId]>, seq: &[ObjectId]) -> bool {
    let present = |o: &ObjectId| seq.contains(o);
    let base = match rule_type {
        RuleType::Conjunctive => blickets.iter().all(present),
        RuleType::Disjunctive => blickets.iter().any(present),
    };
    base && order.is_none_or(|order| seq.iter().filter(|o| order.contains(o)).copied().collect::<Vec<_>>() == order)
}

#[test]
fn evaluate_rule_matches_truth_table() {
    let mut checked = 0usize;
    for n in 1..=5u8 {
        let seqs = placements(n);
        for set in ObjectSet::universe(n).subsets().into_iter().filter(|s| !s.is_empty()) {
            let blickets = set.to_vec();
            let mut orders: Vec<Option<Vec<ObjectId>>> = vec![None];
            orders.extend(permutations(&blickets).into_iter().map(Some));
            for rule_type in [RuleType::Conjunctive, RuleType::Disjunctive] {
                for order in &orders {
                    let rule = RuleSpec {
                        rule_type,
                        active_blickets: set,
                        order_constraint: order.clone(),
                        activation_probability: None,
                    };
                    for seq in &seqs {
                        // placement steps with gaps, as left by removals
                        let placement: Vec<Placement> =
                            seq.iter().enumerate().map(|(i, &o)| Placement { object: o, step: 3 * i as u32 + 1 }).collect();
                        let mut rng = ChaCha8Rng::seed_from_u64(0);
                        let before = rng.clone();
                        let got = evaluate_rule(&rule, &placement, &mut rng) == Detector::Active;
                        assert_eq!(got, oracle(rule_type, &blickets, order.as_deref(), seq), "{rule:?} {seq:?}");
                        assert_eq!(rng, before, "deterministic rules must not draw");
                        checked += 1;
                    }
                }
            }
        }
    }
    assert!(checked > 200_000, "{checked}");
}

#[test]
fn stochastic_frequency() {
    let ab: ObjectSet = "AB".parse().unwrap();
    let rule = RuleSpec { rule_type: RuleType::Conjunctive, active_blickets: ab, order_constraint: None, activation_probability: Some(0.7) };
    let placement: Vec<Placement> = ab.iter().enumerate().map(|(i, o)| Placement { object: o, step: i as u32 + 1 }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let active = (0..10_000).filter(|_| evaluate_rule(&rule, &placement, &mut rng) == Detector::Active).count();
    let rate = active as f64 / 10_000.0;
    assert!((rate - 0.70).abs() <= 0.02, "{rate}");
    // base condition unmet: never active and no draw
    let only_a = &placement[..1];
    let before = rng.clone();
    assert_eq!(evaluate_rule(&rule, only_a, &mut rng), Detector::Inactive);
    assert_eq!(rng, before);
}

#[test]
fn grading_partition() {
    for truth in ObjectSet::universe(5).subsets().into_iter().filter(|s| !s.is_empty()) {
        for rule_type in [RuleType::Conjunctive, RuleType::Disjunctive] {
            let rule = RuleSpec { rule_type, active_blickets: truth, order_constraint: None, activation_probability: None };
            for claimed in ObjectSet::universe(5).subsets() {
                for answered in [RuleType::Conjunctive, RuleType::Disjunctive] {
                    let v = grade(&rule, &Answer { rule_type: answered, claimed_blickets: claimed });
                    let over = !claimed.difference(truth).is_empty();
                    let under = !truth.difference(claimed).is_empty();
                    let expected = match (over, under) {
                        (false, false) => ObjectSetError::None,
                        (true, false) => ObjectSetError::OverInclusion,
                        (false, true) => ObjectSetError::UnderInclusion,
                        (true, true) => ObjectSetError::Mixed,
                    };
                    assert_eq!(v.object_set_error, expected);
                    assert_eq!(v.rule_type_error, answered != rule_type);
                    assert_eq!(v.correct, answered == rule_type && claimed == truth);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Fisher: exhaustive hypergeometric enumeration with exact integer weights

fn factorial(n: u64) -> u128 {
    (1..=n as u128).product()
}

/// Unnormalised probability of a table given its margins:
/// r1! r2! c1! c2! / (a! b! c! d!) up to the common factor 1/n!.
fn weight(a: u64, b: u64, c: u64, d: u64) -> u128 {
    factorial(a + b) * factorial(c + d) * factorial(a + c) * factorial(b + d)
        / (factorial(a) * factorial(b) * factorial(c) * factorial(d))
}

fn brute_fisher(t: &ContingencyTable) -> (f64, f64) {
    let (r1, _) = t.row_totals();
    let (c1, _) = t.col_totals();
    let n = t.n();
    let tables: Vec<(u64, u128)> = (0..=r1.min(c1))
        .filter(|&x| r1 + c1 <= n + x)
        .map(|x| (x, weight(x, r1 - x, c1 - x, n + x - r1 - c1)))
        .collect();
    let total: u128 = tables.iter().map(|t| t.1).sum();
    let observed = weight(t.a, t.b, t.c, t.d);
    let two: u128 = tables.iter().filter(|x| x.1 <= observed).map(|x| x.1).sum();
    let greater: u128 = tables.iter().filter(|x| x.0 >= t.a).map(|x| x.1).sum();
    (two as f64 / total as f64, greater as f64 / total as f64)
}

#[test]
fn fisher_matches_enumeration_up_to_n12() {
    let mut checked = 0;
    for n in 0..=12u64 {
        for a in 0..=n {
            for b in 0..=n - a {
                for c in 0..=n - a - b {
                    let d = n - a - b - c;
                    let t = ContingencyTable::new(a, b, c, d);
                    if t.has_empty_margin() {
                        assert!(fisher_exact(&t, Sided::TwoSided).is_err());
                        continue;
                    }
                    let (two, greater) = brute_fisher(&t);
                    let got_two = fisher_exact(&t, Sided::TwoSided).unwrap();
                    let got_greater = fisher_exact(&t, Sided::OneTailedGreater).unwrap();
                    assert!((got_two - two).abs() < 1e-9, "{t:?}: {got_two} vs {two}");
                    assert!((got_greater - greater).abs() < 1e-9, "{t:?}: {got_greater} vs {greater}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 1000);
}

proptest! {
    #[test]
    fn fisher_symmetric_under_double_swap(a in 0u64..40, b in 0u64..40, c in 0u64..40, d in 0u64..40) {
        let t = ContingencyTable::new(a, b, c, d);
        prop_assume!(!t.has_empty_margin());
        let p = fisher_exact(&t, Sided::TwoSided).unwrap();
        let q = fisher_exact(&t.swap_rows().swap_cols(), Sided::TwoSided).unwrap();
        prop_assert!((p - q).abs() < 1e-12);
        let r = fisher_exact(&t.swap_rows(), Sided::TwoSided).unwrap();
        prop_assert!((p - r).abs() < 1e-12);
    }

    #[test]
    fn cohens_h_symmetries(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0) {
        let h = cohens_h(p1, p2).unwrap();
        prop_assert!((h + cohens_h(p2, p1).unwrap()).abs() < 1e-12);
        prop_assert!((h.abs() - cohens_h(1.0 - p1, 1.0 - p2).unwrap().abs()).abs() < 1e-9);
    }

    #[test]
    fn odds_ratio_interval_brackets_and_narrows(a in 0u64..20, b in 0u64..20, c in 0u64..20, d in 0u64..20) {
        let t = ContingencyTable::new(a, b, c, d);
        let r = odds_ratio_ci(&t, 0.95).unwrap();
        prop_assert!(r.lower <= r.odds_ratio && r.odds_ratio <= r.upper);
        prop_assume!(!r.corrected);
        let mut last = r.upper / r.lower;
        for k in 2..5u64 {
            let s = odds_ratio_ci(&ContingencyTable::new(a * k, b * k, c * k, d * k), 0.95).unwrap();
            prop_assert!((s.odds_ratio - r.odds_ratio).abs() < 1e-9 * r.odds_ratio.max(1.0));
            let width = s.upper / s.lower;
            prop_assert!(width < last);
            last = width;
        }
    }
}

#[test]
fn odds_ratio_zero_cell_matches_hand_correction() {
    let t = ContingencyTable::new(7, 0, 3, 5);
    let r = odds_ratio_ci(&t, 0.95).unwrap();
    let (a, b, c, d) = (7.5f64, 0.5, 3.5, 5.5);
    let or = a * d / (b * c);
    let se = (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt();
    assert!((r.odds_ratio - or).abs() < 1e-12);
    assert!((r.lower - (or.ln() - 1.959963984540054 * se).exp()).abs() < 1e-9);
    assert!((r.upper - (or.ln() + 1.959963984540054 * se).exp()).abs() < 1e-9);
    assert_eq!(odds_ratio_ci(&ContingencyTable::new(4, 4, 4, 4), 0.95).unwrap().odds_ratio, 1.0);
}

// ---------------------------------------------------------------------------
// CMH

/// Values from statsmodels `StratifiedTable` (continuity-corrected test,
/// pooled odds ratio and its interval).
const CMH_FROZEN: [([[u64; 4]; 3], [f64; 5]); 7] = [
    ([[23, 7, 23, 7], [28, 2, 21, 9], [45, 5, 41, 9]], [2.012269938650307, 0.9830132797592169, 4.119202038641375, 3.104388449825408, 0.07808155075523515]),
    ([[28, 19, 20, 27], [17, 23, 25, 7], [2, 9, 9, 26]], [0.7850711891821887, 0.44732875094051067, 1.3778161381044367, 0.5112143396792037, 0.47461364973244846]),
    ([[27, 1, 15, 24], [4, 24, 4, 14], [24, 9, 10, 9]], [3.7220050515342953, 1.7983034854329136, 7.703550438435501, 13.34797217778899, 0.0002587022138430539]),
    ([[21, 8, 29, 13], [14, 15, 17, 17], [15, 29, 24, 23]], [0.7627893720039948, 0.4438550719291625, 1.3108955216244758, 0.7031120300318882, 0.40173997870191225]),
    ([[21, 19, 10, 29], [14, 7, 25, 5], [25, 18, 4, 2]], [1.3827076181964792, 0.7085638408324172, 2.698247140543488, 0.6325392951554178, 0.4264254108423633]),
    ([[13, 2, 5, 15], [29, 14, 24, 27], [24, 19, 13, 15]], [2.5850244702011866, 1.4594015574691535, 4.578829916508546, 10.079661061103621, 0.0014991490756925963]),
    ([[8, 15, 12, 8], [29, 1, 3, 6], [29, 21, 26, 6]], [0.7390795413687028, 0.3868275927069959, 1.4120982545408094, 0.6787637318022886, 0.41001275390523206]),
];

#[test]
fn cmh_matches_frozen_reference() {
    for (strata, [or, lo, hi, stat, p]) in CMH_FROZEN {
        let tables: Vec<ContingencyTable> = strata.iter().map(|s| ContingencyTable::new(s[0], s[1], s[2], s[3])).collect();
        let r = cmh(&tables, 0.95).unwrap();
        for (got, want) in [(r.common_odds_ratio, or), (r.lower, lo), (r.upper, hi), (r.statistic, stat), (r.p_value, p)] {
            assert!((got - want).abs() < 1e-6 * want.abs().max(1.0), "{strata:?}: {got} vs {want}");
        }
    }
}

type Terms = (f64, f64, f64, f64, f64, f64, f64);

/// Straight transcription of the textbook formulas, organised per stratum
/// rather than by running sums.
fn cmh_reference(strata: &[[f64; 4]]) -> (f64, f64, f64) {
    let terms: Vec<Terms> = strata
        .iter()
        .map(|&[a, b, c, d]| {
            let n = a + b + c + d;
            let e = (a + b) * (a + c) / n;
            let v = (a + b) * (c + d) * (a + c) * (b + d) / (n * n * (n - 1.0));
            (a, e, v, a * d / n, b * c / n, (a + d) / n, (b + c) / n)
        })
        .collect();
    let sum = |f: &dyn Fn(&Terms) -> f64| terms.iter().map(f).sum::<f64>();
    let (o, e, v) = (sum(&|t| t.0), sum(&|t| t.1), sum(&|t| t.2));
    let stat = ((o - e).abs() - 0.5).max(0.0).powi(2) / v;
    let r = sum(&|t| t.3);
    let s = sum(&|t| t.4);
    let var = sum(&|t| t.5 * t.3) / (2.0 * r * r)
        + sum(&|t| t.5 * t.4 + t.6 * t.3) / (2.0 * r * s)
        + sum(&|t| t.6 * t.4) / (2.0 * s * s);
    (stat, r / s, var)
}

proptest! {
    #[test]
    fn cmh_matches_reimplementation(cells in proptest::collection::vec([1u64..40, 1u64..40, 1u64..40, 1u64..40], 3)) {
        let tables: Vec<ContingencyTable> = cells.iter().map(|c| ContingencyTable::new(c[0], c[1], c[2], c[3])).collect();
        let r = cmh(&tables, 0.95).unwrap();
        let f: Vec<[f64; 4]> = cells.iter().map(|c| c.map(|x| x as f64)).collect();
        let (stat, or, var) = cmh_reference(&f);
        prop_assert!((r.statistic - stat).abs() < 1e-6 * stat.max(1.0));
        prop_assert!((r.common_odds_ratio - or).abs() < 1e-6 * or.max(1.0));
        let lo = (or.ln() - 1.959963984540054 * var.sqrt()).exp();
        prop_assert!((r.lower - lo).abs() < 1e-6 * lo.max(1.0));
    }
}

#[test]
fn cmh_identical_strata_give_single_table_or() {
    let t = ContingencyTable::new(12, 5, 7, 9);
    let r = cmh(&[t, t], 0.95).unwrap();
    assert!((r.common_odds_ratio - 12.0 * 9.0 / (5.0 * 7.0)).abs() < 1e-12);
}

// ---------------------------------------------------------------------------
// Bayes factors against grid integration

fn choose(n: u64, k: u64) -> f64 {
    (factorial(n) / (factorial(k) * factorial(n - k))) as f64
}

/// Beta(a, b) density and CDF for integer parameters, the CDF via the
/// binomial-sum identity.
fn beta_pdf(a: u64, b: u64, x: f64) -> f64 {
    let norm = factorial(a + b - 1) as f64 / (factorial(a - 1) * factorial(b - 1)) as f64;
    norm * x.powi(a as i32 - 1) * (1.0 - x).powi(b as i32 - 1)
}

fn beta_cdf(a: u64, b: u64, x: f64) -> f64 {
    let m = a + b - 1;
    (a..=m).map(|j| choose(m, j) * x.powi(j as i32) * (1.0 - x).powi((m - j) as i32)).sum()
}

/// P(p1 > p2) = integral of f1(x) F2(x) dx, midpoint rule.
fn grid_probability(k1: u64, n1: u64, k2: u64, n2: u64) -> f64 {
    let steps = 100_000;
    let h = 1.0 / steps as f64;
    (0..steps)
        .map(|i| {
            let x = (i as f64 + 0.5) * h;
            beta_pdf(k1 + 1, n1 - k1 + 1, x) * beta_cdf(k2 + 1, n2 - k2 + 1, x) * h
        })
        .sum()
}

/// Monte-Carlo draws for the grid comparison: the binomial standard error
/// of P is at most 0.5/sqrt(draws) = 2.5e-4, a quarter of the 1e-3 band.
const GRID_DRAWS: u64 = 4_000_000;

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]
    #[test]
    fn bayes_factor_matches_grid(n1 in 0u64..=5, n2 in 0u64..=5, f1 in 0.0f64..=1.0, f2 in 0.0f64..=1.0, seed in any::<u64>()) {
        let k1 = (f1 * n1 as f64).round() as u64;
        let k2 = (f2 * n2 as f64).round() as u64;
        let req = BfRequest { draws: GRID_DRAWS, seed, ..BfRequest::new(k1, n1, k2, n2) };
        let bf = bayes_factor(&req).unwrap();
        let exact = grid_probability(k1, n1, k2, n2);
        prop_assert!((bf.probability - exact).abs() < 1e-3, "{k1}/{n1} vs {k2}/{n2}: {} vs {exact}", bf.probability);
        prop_assert!((bf.posterior_odds * (1.0 - bf.probability) - bf.probability).abs() < 1e-12);
        prop_assert!((bf.prob_over_half * 0.5 - bf.probability).abs() < 1e-12);
    }
}

#[test]
fn bayes_factor_identical_counts_near_one() {
    let bf = bayes_factor(&BfRequest::new(40, 60, 40, 60)).unwrap();
    assert!((bf.posterior_odds - 1.0).abs() < 0.01, "{}", bf.posterior_odds);
}

#[test]
fn bayes_factor_is_reproducible() {
    let req = BfRequest { seed: 99, ..BfRequest::new(98, 110, 85, 110) };
    assert_eq!(bayes_factor(&req).unwrap(), bayes_factor(&req).unwrap());
}
