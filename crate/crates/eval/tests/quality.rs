mod common;

use common::{answer, gold_for, hits, placements, varied, MODELS};
use empdial_eval::hits::Hit;
use empdial_eval::{aggregate, filter_assignments, score_bonus, EvalConfig, Placement, ScoredAnswer};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scored(hits: &[Hit], hit_id: usize, worker: &str, uniform: bool, bonus: usize, duration: f64) -> ScoredAnswer {
    let hit = &hits[hit_id];
    let p = if uniform {
        placements(hit, |_, _, _| Placement::Good, gold_for(bonus))
    } else {
        placements(hit, varied, gold_for(bonus))
    };
    let points = score_bonus(&p, hit, &EvalConfig::default()).points;
    assert_eq!(points, bonus);
    ScoredAnswer {
        hit_id,
        answer: answer(&format!("a-{worker}-{hit_id}"), worker, p, duration),
        bonus_points: points,
    }
}

#[test]
fn bonus_points_examples() {
    let hits = hits(3, 1);
    let cfg = EvalConfig::default();
    let h = &hits[0];
    let all_bad = placements(h, varied, |_| Placement::Bad);
    let s = score_bonus(&all_bad, h, &cfg);
    assert_eq!((s.points, s.payout), (0, false));
    let all_okay = placements(h, varied, |_| Placement::Okay);
    let s = score_bonus(&all_okay, h, &cfg);
    assert_eq!((s.points, s.payout), (3, true));
    let mixed = placements(h, varied, |r| [Placement::Good, Placement::Bad, Placement::Okay][r]);
    let s = score_bonus(&mixed, h, &cfg);
    assert_eq!((s.points, s.payout), (2, false));
    assert_eq!(s.tasks.iter().map(|t| t.correct).collect::<Vec<_>>(), [true, false, true]);
    // unanswered bonus tasks count as wrong
    let s = score_bonus(&all_okay[..1], h, &cfg);
    assert!(s.points <= 1);
}

#[derive(Debug, PartialEq)]
enum Fate {
    Kept,
    Uniform,
    Fast,
    LowBonus,
}

#[test]
fn rule_table() {
    let hits = hits(12, 2);
    let cfg = EvalConfig::default();
    // (uniform, bonus, seconds, expected)
    let cases = [
        (false, 3, 240.0, Fate::Kept),
        (false, 1, 1200.0, Fate::LowBonus),
        (false, 1, 100.0, Fate::Fast),
        (false, 0, 100.0, Fate::Fast),
        (false, 2, 100.0, Fate::Kept),
        (false, 1, 299.9, Fate::Fast),
        (false, 1, 300.0, Fate::LowBonus),
        (false, 2, 300.0, Fate::Kept),
        (false, 0, 1200.0, Fate::LowBonus),
        (false, 3, 1200.0, Fate::Kept),
        (true, 3, 1200.0, Fate::Uniform),
        (true, 0, 100.0, Fate::Uniform),
    ];
    for (i, (uniform, bonus, secs, expected)) in cases.into_iter().enumerate() {
        let a = scored(&hits, i, &format!("w{i}"), uniform, bonus, secs);
        let out = filter_assignments(std::slice::from_ref(&a), &hits, &cfg);
        let fate = if out.dropped_uniform == 1 {
            Fate::Uniform
        } else if out.dropped_fast == 1 {
            Fate::Fast
        } else if out.dropped_low_bonus == 1 {
            Fate::LowBonus
        } else {
            assert_eq!(out.accepted, vec![a]);
            Fate::Kept
        };
        assert_eq!(fate, expected, "case {i}");
    }
}

#[test]
fn all_good_worker_loses_every_assignment() {
    let hits = hits(10, 3);
    let mut answers: Vec<ScoredAnswer> = (0..10).map(|h| scored(&hits, h, "lazy", true, 3, 900.0)).collect();
    answers.extend((0..10).map(|h| scored(&hits, h, "careful", false, 3, 900.0)));
    let out = filter_assignments(&answers, &hits, &EvalConfig::default());
    assert_eq!(out.uniform_workers, vec!["lazy".to_string()]);
    assert_eq!(out.dropped_uniform, 10);
    assert_eq!(out.accepted.len(), 10);
    assert!(out.accepted.iter().all(|a| a.answer.worker_id == "careful"));
}

#[test]
fn uniformity_threshold_is_inclusive() {
    let hits = hits(2, 4);
    let cfg = EvalConfig::default();
    // 20 tasks; `odd` tasks get a different pattern
    let make = |odd: &[usize]| -> Vec<ScoredAnswer> {
        (0..2)
            .map(|h| {
                let p = placements(
                    &hits[h],
                    |k, _, _| if odd.contains(&(h * 10 + k)) { Placement::Bad } else { Placement::Good },
                    gold_for(3),
                );
                ScoredAnswer {
                    hit_id: h,
                    answer: answer(&format!("a{h}"), "w", p, 900.0),
                    bonus_points: 3,
                }
            })
            .collect()
    };
    assert_eq!(filter_assignments(&make(&[5]), &hits, &cfg).dropped_uniform, 2);
    assert_eq!(filter_assignments(&make(&[5, 15]), &hits, &cfg).accepted.len(), 2);
}

fn random_answers(hits: &[Hit], n: usize, seed: u64) -> Vec<ScoredAnswer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let h = rng.gen_range(0..hits.len());
            let w = format!("w{}", rng.gen_range(0..6));
            let uniform = rng.gen_bool(0.2);
            let bonus = rng.gen_range(0..=3);
            let secs = rng.gen_range(0.0..900.0);
            let mut a = scored(hits, h, &w, uniform, bonus, secs);
            a.answer.assignment_id = format!("a{i}");
            a
        })
        .collect()
}

#[test]
fn filtering_is_idempotent() {
    let hits = hits(20, 5);
    let cfg = EvalConfig::default();
    for seed in 0..20 {
        let answers = random_answers(&hits, 60, seed);
        let once = filter_assignments(&answers, &hits, &cfg);
        let twice = filter_assignments(&once.accepted, &hits, &cfg);
        assert_eq!(twice.accepted, once.accepted, "seed {seed}");
        assert_eq!(
            once.accepted.len() + once.dropped_uniform + once.dropped_fast + once.dropped_low_bonus,
            answers.len()
        );
    }
}

#[test]
fn single_good_placement_gives_pure_good_cell() {
    let hits = hits(3, 6);
    let a = ScoredAnswer {
        hit_id: 1,
        answer: answer("a", "w", placements(&hits[1], |_, _, _| Placement::Good, gold_for(3)), 900.0),
        bonus_points: 3,
    };
    let agg = aggregate(&[a], &hits);
    for m in MODELS {
        for d in ["ED", "OS", "OSED"] {
            let c = agg.cell(m, d).unwrap();
            if c.counts.iter().sum::<usize>() > 0 {
                assert_eq!(c.proportions, Some([1.0, 0.0, 0.0]));
            }
        }
    }
    // a cell with no placements stays empty rather than 0/0
    let empty = aggregate(&[], &hits);
    assert!(empty.cell("Ours", "ED").unwrap().proportions.is_none());
    assert!(empty.to_table().contains('-'));
}

#[test]
fn sampled_proportions_recover_the_source() {
    let hits = hits(60, 7);
    let truth = |m: &str| match m {
        "Transformer" => [0.2, 0.3, 0.5],
        "EmoPrepend" => [0.3, 0.4, 0.3],
        "MultiTask" => [0.5, 0.3, 0.2],
        _ => [0.6, 0.3, 0.1],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut draw = |probs: [f64; 3]| {
        let u: f64 = rng.gen();
        if u < probs[0] {
            Placement::Good
        } else if u < probs[0] + probs[1] {
            Placement::Okay
        } else {
            Placement::Bad
        }
    };
    let answers: Vec<ScoredAnswer> = (0..1000)
        .map(|i| {
            let h = i % hits.len();
            let p = placements(&hits[h], |_, _, _| Placement::Good, gold_for(3));
            let p = p
                .into_iter()
                .enumerate()
                .map(|(k, mut m)| {
                    for c in &hits[h].tasks[k].candidates {
                        if let empdial_eval::CandidateSource::Model(name) = &c.source {
                            m.insert(c.id.clone(), draw(truth(name)));
                        }
                    }
                    m
                })
                .collect();
            ScoredAnswer {
                hit_id: h,
                answer: answer(&format!("a{i}"), "w", p, 900.0),
                bonus_points: 3,
            }
        })
        .collect();
    let agg = aggregate(&answers, &hits);
    for m in MODELS {
        for d in ["ED", "OS", "OSED"] {
            let p = agg.cell(m, d).unwrap().proportions.unwrap();
            for (got, want) in p.iter().zip(truth(m)) {
                assert!((got - want).abs() < 0.03, "{m}/{d}: {p:?}");
            }
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rows_normalise_and_order_does_not_matter(seed in 0u64..1000, n in 1usize..40) {
        let hits = hits(6, seed % 3);
        let mut answers = random_answers(&hits, n, seed);
        let agg = aggregate(&answers, &hits);
        for row in agg.cells.values() {
            for c in row.values() {
                if let Some(p) = c.proportions {
                    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
        answers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
        prop_assert_eq!(aggregate(&answers, &hits), agg);
    }
}
