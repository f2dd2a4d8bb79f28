mod common;

use common::{dialogs, models, MODELS};
use empdial_eval::hits::{read_hits, write_hits, CandidateSource};
use empdial_eval::{build_hits, EvalConfig, Error};

#[test]
fn six_thousand_dialogs_make_six_hundred_hits() {
    let hits = build_hits(&dialogs(6000), &models(), &EvalConfig::default(), 1).unwrap();
    assert_eq!(hits.len(), 600);
    let mut seen: Vec<&str> = hits.iter().flat_map(|h| h.tasks.iter().map(|t| t.dialog_id.as_str())).collect();
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 6000);
}

#[test]
fn ten_dialogs_make_one_hit() {
    let mut d = dialogs(10);
    // guarantee three ED dialogs regardless of the cycle
    for x in d.iter_mut().take(4) {
        x.source = "ED".into();
    }
    let hits = build_hits(&d, &models(), &EvalConfig::default(), 2).unwrap();
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].tasks.len(), 10);
}

#[test]
fn structural_counts() {
    let hits = build_hits(&dialogs(3000), &models(), &EvalConfig::default(), 3).unwrap();
    for h in &hits {
        assert_eq!(h.tasks.len(), 10);
        assert_eq!(h.bonus_tasks().count(), 3);
        for t in &h.tasks {
            let gold = t.candidates.iter().filter(|c| c.source == CandidateSource::GroundTruth).count();
            if t.bonus {
                assert_eq!(t.source, "ED");
                assert_eq!(t.candidates.len(), 5);
                assert_eq!(gold, 1);
            } else {
                assert_eq!(t.candidates.len(), 4);
                assert_eq!(gold, 0);
            }
            for m in MODELS {
                assert_eq!(
                    t.candidates.iter().filter(|c| c.source == CandidateSource::Model(m.into())).count(),
                    1
                );
            }
            for c in &t.candidates {
                assert!(MODELS.iter().all(|m| !c.id.contains(m)));
            }
        }
    }
}

#[test]
fn candidate_order_is_shuffled_per_task() {
    let hits = build_hits(&dialogs(1000), &models(), &EvalConfig::default(), 4).unwrap();
    let firsts: std::collections::BTreeSet<String> = hits
        .iter()
        .flat_map(|h| &h.tasks)
        .map(|t| match &t.candidates[0].source {
            CandidateSource::Model(m) => m.clone(),
            CandidateSource::GroundTruth => "gold".into(),
        })
        .collect();
    assert_eq!(firsts.len(), 5);
}

#[test]
fn same_seed_same_hits() {
    let a = build_hits(&dialogs(300), &models(), &EvalConfig::default(), 9).unwrap();
    let b = build_hits(&dialogs(300), &models(), &EvalConfig::default(), 9).unwrap();
    let c = build_hits(&dialogs(300), &models(), &EvalConfig::default(), 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hits.jsonl");
    write_hits(&path, &a).unwrap();
    assert_eq!(read_hits(&path).unwrap(), a);
}

#[test]
fn missing_output_names_dialog_and_model() {
    let mut d = dialogs(30);
    d[7].outputs.remove("MultiTask");
    match build_hits(&d, &models(), &EvalConfig::default(), 1) {
        Err(Error::MissingOutput { dialog, model }) => {
            assert_eq!(dialog, "d00007");
            assert_eq!(model, "MultiTask");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn layout_errors() {
    // 20 dialogs with only 5 ED cannot give two HITs three bonus tasks each
    let mut d = dialogs(20);
    for (i, x) in d.iter_mut().enumerate() {
        x.source = if i < 5 { "ED".into() } else { "OS".into() };
    }
    assert!(matches!(build_hits(&d, &models(), &EvalConfig::default(), 1), Err(Error::HitLayout(_))));
    assert!(matches!(
        build_hits(&dialogs(25), &models(), &EvalConfig::default(), 1),
        Err(Error::HitLayout(_))
    ));
}

#[test]
fn exactly_enough_ed_dialogs_are_spread_evenly() {
    let mut d = dialogs(100);
    for (i, x) in d.iter_mut().enumerate() {
        x.source = if i < 30 { "ED".into() } else { "OS".into() };
    }
    let hits = build_hits(&d, &models(), &EvalConfig::default(), 5).unwrap();
    for h in &hits {
        assert_eq!(h.tasks.iter().filter(|t| t.source == "ED").count(), 3);
        assert_eq!(h.bonus_tasks().count(), 3);
    }
}
