#![allow(dead_code)]

use std::collections::BTreeMap;

use empdial_eval::hits::{CandidateSource, Hit, Placement};
use empdial_eval::{build_hits, EvalConfig, EvalDialog, RatingAnswer};

pub const MODELS: [&str; 4] = ["Transformer", "EmoPrepend", "MultiTask", "Ours"];
pub const SOURCES: [&str; 3] = ["ED", "OS", "OSED"];

pub fn models() -> Vec<String> {
    MODELS.iter().map(|s| s.to_string()).collect()
}

/// `n` dialogs cycling through the three sources.
pub fn dialogs(n: usize) -> Vec<EvalDialog> {
    (0..n)
        .map(|i| EvalDialog {
            dialog_id: format!("d{i:05}"),
            source: SOURCES[i % 3].to_string(),
            context: vec![format!("context {i}")],
            ground_truth: format!("gold {i}"),
            outputs: MODELS.iter().enumerate().map(|(j, m)| (m.to_string(), format!("reply {j} to {i}"))).collect(),
        })
        .collect()
}

pub fn hits(n_hits: usize, seed: u64) -> Vec<Hit> {
    build_hits(&dialogs(n_hits * 10), &models(), &EvalConfig::default(), seed).unwrap()
}

/// Places model candidates with `model_place(task, candidate_rank, model)`
/// and ground truths with `gold(bonus_rank)`.
pub fn placements(
    hit: &Hit,
    model_place: impl Fn(usize, usize, &str) -> Placement,
    gold: impl Fn(usize) -> Placement,
) -> Vec<BTreeMap<String, Placement>> {
    let mut bonus_rank = 0;
    hit.tasks
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let mut m = BTreeMap::new();
            let mut rank = 0;
            for c in &t.candidates {
                let p = match &c.source {
                    CandidateSource::Model(name) => {
                        rank += 1;
                        model_place(k, rank - 1, name)
                    }
                    CandidateSource::GroundTruth => {
                        bonus_rank += 1;
                        gold(bonus_rank - 1)
                    }
                };
                m.insert(c.id.clone(), p);
            }
            m
        })
        .collect()
}

pub fn answer(assignment: &str, worker: &str, placements: Vec<BTreeMap<String, Placement>>, duration: f64) -> RatingAnswer {
    RatingAnswer {
        assignment_id: assignment.to_string(),
        worker_id: worker.to_string(),
        task_timestamps: (0..placements.len() as u64).map(|k| 1_000 * k).collect(),
        placements,
        duration_secs: duration,
    }
}

/// Gold placements giving exactly `points` bonus points out of three.
pub fn gold_for(points: usize) -> impl Fn(usize) -> Placement {
    move |rank| if rank < points { Placement::Okay } else { Placement::Bad }
}

/// Varied placements: three distinct patterns across tasks.
pub fn varied(task: usize, rank: usize, _: &str) -> Placement {
    Placement::ALL[(task + rank) % 3]
}
