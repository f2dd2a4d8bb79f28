//! Answer validation, bonus scoring and the three worker-quality filters.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::hits::{CandidateSource, Hit, Placement};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingAnswer {
    pub assignment_id: String,
    pub worker_id: String,
    /// One map per task, candidate id to placement.
    pub placements: Vec<BTreeMap<String, Placement>>,
    /// Client-side completion time of each task, milliseconds since epoch.
    #[serde(default)]
    pub task_timestamps: Vec<u64>,
    pub duration_secs: f64,
}

/// Every candidate of every task placed exactly once, nothing else placed.
pub fn validate_placements(placements: &[BTreeMap<String, Placement>], hit: &Hit) -> Result<()> {
    if placements.len() != hit.tasks.len() {
        return Err(Error::InvalidAnswer(format!(
            "{} tasks answered, HIT has {}",
            placements.len(),
            hit.tasks.len()
        )));
    }
    for (k, (task, placed)) in hit.tasks.iter().zip(placements).enumerate() {
        if placed.len() != task.candidates.len() || task.candidates.iter().any(|c| !placed.contains_key(&c.id)) {
            return Err(Error::InvalidAnswer(format!("task {k}: every candidate must be placed exactly once")));
        }
    }
    Ok(())
}

pub fn validate_answer(answer: &RatingAnswer, hit: &Hit) -> Result<()> {
    validate_placements(&answer.placements, hit)?;
    if !answer.duration_secs.is_finite() || answer.duration_secs < 0.0 {
        return Err(Error::InvalidAnswer("duration must be a non-negative number".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BonusTask {
    pub task_index: usize,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BonusScore {
    pub points: usize,
    pub tasks: Vec<BonusTask>,
    /// All bonus points earned.
    pub payout: bool,
}

/// One point per bonus task whose ground truth is placed good or okay.
/// Missing placements count as incorrect, so partial answers can be checked.
pub fn score_bonus(placements: &[BTreeMap<String, Placement>], hit: &Hit, cfg: &EvalConfig) -> BonusScore {
    let tasks: Vec<BonusTask> = hit
        .bonus_tasks()
        .map(|(k, task)| {
            let correct = task
                .ground_truth_id()
                .and_then(|id| placements.get(k).and_then(|p| p.get(id)))
                .is_some_and(|&p| p != Placement::Bad);
            BonusTask { task_index: k, correct }
        })
        .collect();
    let points = tasks.iter().filter(|t| t.correct).count();
    BonusScore {
        points,
        payout: points >= cfg.bonus_payout,
        tasks,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredAnswer {
    pub hit_id: usize,
    pub answer: RatingAnswer,
    pub bonus_points: usize,
}

/// Placements of the model candidates of one task, in display order. The
/// ground truth is left out so bonus and plain tasks compare alike.
fn pattern(hit: &Hit, task: usize, placed: &BTreeMap<String, Placement>) -> Vec<Placement> {
    hit.tasks[task]
        .candidates
        .iter()
        .filter(|c| c.source != CandidateSource::GroundTruth)
        .map(|c| placed[&c.id])
        .collect()
}

/// Share of a worker's tasks that carry their most common pattern.
pub fn uniformity(answers: &[&ScoredAnswer], hits: &[Hit]) -> f64 {
    let mut counts: HashMap<Vec<Placement>, usize> = HashMap::new();
    let mut total = 0;
    for a in answers {
        let hit = &hits[a.hit_id];
        for (k, placed) in a.answer.placements.iter().enumerate() {
            *counts.entry(pattern(hit, k, placed)).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    *counts.values().max().unwrap() as f64 / total as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub accepted: Vec<ScoredAnswer>,
    pub uniform_workers: Vec<String>,
    pub dropped_uniform: usize,
    pub dropped_fast: usize,
    pub dropped_low_bonus: usize,
}

fn passes_quality(a: &ScoredAnswer, cfg: &EvalConfig) -> bool {
    a.bonus_points >= cfg.bonus_keep
}

/// Applied in order: degenerate workers, fast and careless assignments,
/// then the bonus threshold. Input order is preserved.
///
/// A worker is degenerate when uniform over all their answers or over the
/// answers that clear the later filters; the second test makes a rerun on
/// the accepted set a no-op.
pub fn filter_assignments(answers: &[ScoredAnswer], hits: &[Hit], cfg: &EvalConfig) -> FilterOutcome {
    let mut by_worker: BTreeMap<&str, Vec<&ScoredAnswer>> = BTreeMap::new();
    for a in answers {
        by_worker.entry(a.answer.worker_id.as_str()).or_default().push(a);
    }
    let uniform_workers: Vec<String> = by_worker
        .iter()
        .filter(|(_, list)| {
            let kept: Vec<&ScoredAnswer> = list.iter().copied().filter(|a| passes_quality(a, cfg)).collect();
            uniformity(list, hits) >= cfg.uniformity_threshold || uniformity(&kept, hits) >= cfg.uniformity_threshold
        })
        .map(|(w, _)| w.to_string())
        .collect();
    let mut out = FilterOutcome {
        uniform_workers,
        ..Default::default()
    };
    for a in answers {
        if out.uniform_workers.iter().any(|w| *w == a.answer.worker_id) {
            out.dropped_uniform += 1;
        } else if a.answer.duration_secs < cfg.min_duration_secs && a.bonus_points < cfg.bonus_keep {
            out.dropped_fast += 1;
        } else if !passes_quality(a, cfg) {
            out.dropped_low_bonus += 1;
        } else {
            out.accepted.push(a.clone());
        }
    }
    out
}
