//! Evaluation state behind a single writer. Every state change is appended
//! to a line-delimited event log before it is applied; the in-memory index
//! is rebuilt by replaying that log on startup.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, AggregateScores};
use crate::config::EvalConfig;
use crate::hits::{Hit, Placement};
use crate::quality::{filter_assignments, score_bonus, validate_answer, BonusScore, FilterOutcome, RatingAnswer, ScoredAnswer};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Assigned {
        assignment_id: String,
        hit_id: usize,
        worker_id: String,
    },
    Answered {
        hit_id: usize,
        bonus_points: usize,
        answer: RatingAnswer,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub worker_id: String,
    pub completed: usize,
    pub blocked: bool,
    pub bonus_points: usize,
}

#[derive(Clone, Debug)]
struct Assignment {
    id: String,
    hit_id: usize,
    worker_id: String,
    answered: bool,
}

/// Task as shown to a rater: no model names, no bonus marks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_index: usize,
    pub context: Vec<String>,
    pub candidates: Vec<CandidateView>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateView {
    pub id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitView {
    pub assignment_id: String,
    pub hit_id: usize,
    pub tasks: Vec<TaskView>,
}

impl HitView {
    fn of(hit: &Hit, assignment_id: String) -> Self {
        Self {
            assignment_id,
            hit_id: hit.hit_id,
            tasks: hit
                .tasks
                .iter()
                .enumerate()
                .map(|(k, t)| TaskView {
                    task_index: k,
                    context: t.context.clone(),
                    candidates: t
                        .candidates
                        .iter()
                        .map(|c| CandidateView {
                            id: c.id.clone(),
                            text: c.text.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AssignOutcome {
    Offer(HitView),
    NoneAvailable,
    Refused(String),
}

/// Admission gate for workers; qualification data lives outside this service.
pub trait Admission: Send + Sync {
    fn admit(&self, worker_id: &str) -> std::result::Result<(), String>;
}

pub struct AdmitAll;

impl Admission for AdmitAll {
    fn admit(&self, _: &str) -> std::result::Result<(), String> {
        Ok(())
    }
}

#[derive(Default)]
struct State {
    assignments: Vec<Assignment>,
    by_id: HashMap<String, usize>,
    /// Open plus answered assignments per HIT.
    load: Vec<usize>,
    taken: HashMap<String, BTreeSet<usize>>,
    open: HashMap<String, usize>,
    workers: BTreeMap<String, WorkerRecord>,
    answers: Vec<ScoredAnswer>,
}

impl State {
    fn apply(&mut self, event: &Event, cfg: &EvalConfig) {
        match event {
            Event::Assigned {
                assignment_id,
                hit_id,
                worker_id,
            } => {
                let idx = self.assignments.len();
                self.assignments.push(Assignment {
                    id: assignment_id.clone(),
                    hit_id: *hit_id,
                    worker_id: worker_id.clone(),
                    answered: false,
                });
                self.by_id.insert(assignment_id.clone(), idx);
                self.load[*hit_id] += 1;
                self.taken.entry(worker_id.clone()).or_default().insert(*hit_id);
                self.open.insert(worker_id.clone(), idx);
                self.workers.entry(worker_id.clone()).or_insert_with(|| WorkerRecord {
                    worker_id: worker_id.clone(),
                    ..Default::default()
                });
            }
            Event::Answered {
                hit_id,
                bonus_points,
                answer,
            } => {
                let idx = self.by_id[&answer.assignment_id];
                self.assignments[idx].answered = true;
                self.open.remove(&answer.worker_id);
                let w = self.workers.get_mut(&answer.worker_id).expect("assigned before answering");
                w.completed += 1;
                w.bonus_points += bonus_points;
                if w.completed >= cfg.worker_hit_cap {
                    w.blocked = true;
                }
                self.answers.push(ScoredAnswer {
                    hit_id: *hit_id,
                    answer: answer.clone(),
                    bonus_points: *bonus_points,
                });
            }
        }
    }
}

pub struct EvalService {
    hits: Vec<Hit>,
    config: EvalConfig,
    admission: Box<dyn Admission>,
    state: RwLock<State>,
    /// Held for the whole of every mutation: the single writer.
    log: Mutex<Option<File>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub assignment_id: String,
    pub bonus: BonusScore,
}

impl EvalService {
    /// In-memory service without persistence.
    pub fn new(hits: Vec<Hit>, config: EvalConfig) -> Result<Self> {
        Self::build(hits, config, None, Vec::new())
    }

    /// Replays `log_path` if it exists and appends new events to it.
    pub fn open(hits: Vec<Hit>, config: EvalConfig, log_path: &Path) -> Result<Self> {
        let mut events = Vec::new();
        if log_path.exists() {
            for (n, line) in BufReader::new(File::open(log_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                events.push(
                    serde_json::from_str(&line).map_err(|e| Error::Log(format!("line {}: {e}", n + 1)))?,
                );
            }
        } else if let Some(dir) = log_path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(log_path)?;
        Self::build(hits, config, Some(file), events)
    }

    fn build(hits: Vec<Hit>, config: EvalConfig, log: Option<File>, events: Vec<Event>) -> Result<Self> {
        config.validate()?;
        for (i, h) in hits.iter().enumerate() {
            if h.hit_id != i {
                return Err(Error::Config(format!("HIT at position {i} has id {}", h.hit_id)));
            }
        }
        let mut state = State {
            load: vec![0; hits.len()],
            ..Default::default()
        };
        for (n, e) in events.iter().enumerate() {
            let ok = match e {
                Event::Assigned { hit_id, assignment_id, .. } => {
                    *hit_id < hits.len() && !state.by_id.contains_key(assignment_id)
                }
                Event::Answered { answer, hit_id, .. } => state
                    .by_id
                    .get(&answer.assignment_id)
                    .map(|&i| &state.assignments[i])
                    .is_some_and(|a| !a.answered && a.hit_id == *hit_id && a.worker_id == answer.worker_id),
            };
            if !ok {
                return Err(Error::Log(format!("event {} is inconsistent with the HIT file", n + 1)));
            }
            state.apply(e, &config);
        }
        Ok(Self {
            hits,
            config,
            admission: Box::new(AdmitAll),
            state: RwLock::new(state),
            log: Mutex::new(log),
        })
    }

    pub fn with_admission(mut self, admission: Box<dyn Admission>) -> Self {
        self.admission = admission;
        self
    }

    pub fn hits(&self) -> &[Hit] {
        &self.hits
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    fn commit(&self, log: &mut Option<File>, state: &mut State, event: Event) -> Result<()> {
        if let Some(f) = log.as_mut() {
            let mut line = serde_json::to_string(&event)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        state.apply(&event, &self.config);
        Ok(())
    }

    /// An open assignment is handed back unchanged; otherwise the lowest-id
    /// HIT below the assignment limit that this worker has not taken.
    pub fn next_task(&self, worker_id: &str) -> Result<AssignOutcome> {
        if worker_id.is_empty() {
            return Ok(AssignOutcome::Refused("missing worker id".into()));
        }
        if let Err(reason) = self.admission.admit(worker_id) {
            return Ok(AssignOutcome::Refused(reason));
        }
        let mut log = self.log.lock().unwrap();
        let mut state = self.state.write().unwrap();
        if let Some(w) = state.workers.get(worker_id) {
            if w.blocked {
                return Ok(AssignOutcome::Refused(format!(
                    "worker has completed the maximum of {} HITs",
                    self.config.worker_hit_cap
                )));
            }
        }
        if let Some(&idx) = state.open.get(worker_id) {
            let a = &state.assignments[idx];
            return Ok(AssignOutcome::Offer(HitView::of(&self.hits[a.hit_id], a.id.clone())));
        }
        let taken = state.taken.get(worker_id);
        let pick = (0..self.hits.len())
            .find(|&h| state.load[h] < self.config.max_assignments && !taken.is_some_and(|t| t.contains(&h)));
        let Some(hit_id) = pick else {
            return Ok(AssignOutcome::NoneAvailable);
        };
        let assignment_id = format!("a{:07}", state.assignments.len());
        self.commit(
            &mut log,
            &mut state,
            Event::Assigned {
                assignment_id: assignment_id.clone(),
                hit_id,
                worker_id: worker_id.to_string(),
            },
        )?;
        Ok(AssignOutcome::Offer(HitView::of(&self.hits[hit_id], assignment_id)))
    }

    pub fn submit(&self, answer: RatingAnswer) -> Result<Receipt> {
        let mut log = self.log.lock().unwrap();
        let mut state = self.state.write().unwrap();
        let &idx = state
            .by_id
            .get(&answer.assignment_id)
            .ok_or_else(|| Error::UnknownAssignment(answer.assignment_id.clone()))?;
        let a = &state.assignments[idx];
        if a.worker_id != answer.worker_id {
            return Err(Error::WrongWorker {
                assignment: answer.assignment_id.clone(),
                worker: answer.worker_id.clone(),
            });
        }
        if a.answered {
            return Err(Error::AlreadyAnswered(answer.assignment_id.clone()));
        }
        let hit = &self.hits[a.hit_id];
        validate_answer(&answer, hit)?;
        let bonus = score_bonus(&answer.placements, hit, &self.config);
        let assignment_id = answer.assignment_id.clone();
        self.commit(
            &mut log,
            &mut state,
            Event::Answered {
                hit_id: hit.hit_id,
                bonus_points: bonus.points,
                answer,
            },
        )?;
        Ok(Receipt { assignment_id, bonus })
    }

    /// Bonus correctness for a draft answer; nothing is stored.
    pub fn bonus_check(&self, assignment_id: &str, placements: &[BTreeMap<String, Placement>]) -> Result<BonusScore> {
        let state = self.state.read().unwrap();
        let &idx = state
            .by_id
            .get(assignment_id)
            .ok_or_else(|| Error::UnknownAssignment(assignment_id.to_string()))?;
        let hit = &self.hits[state.assignments[idx].hit_id];
        if placements.len() != hit.tasks.len() {
            return Err(Error::InvalidAnswer(format!(
                "{} tasks sent, HIT has {}",
                placements.len(),
                hit.tasks.len()
            )));
        }
        Ok(score_bonus(placements, hit, &self.config))
    }

    pub fn worker(&self, worker_id: &str) -> Option<WorkerRecord> {
        self.state.read().unwrap().workers.get(worker_id).cloned()
    }

    pub fn workers(&self) -> Vec<WorkerRecord> {
        self.state.read().unwrap().workers.values().cloned().collect()
    }

    /// Open plus answered assignments of a HIT.
    pub fn hit_load(&self, hit_id: usize) -> usize {
        self.state.read().unwrap().load[hit_id]
    }

    pub fn answers(&self) -> Vec<ScoredAnswer> {
        self.state.read().unwrap().answers.clone()
    }

    pub fn filtered(&self) -> FilterOutcome {
        filter_assignments(&self.answers(), &self.hits, &self.config)
    }

    pub fn aggregate(&self) -> AggregateScores {
        aggregate(&self.filtered().accepted, &self.hits)
    }

    /// Stored answers, one JSON object per line.
    pub fn export(&self) -> Result<String> {
        let mut out = String::new();
        for a in self.answers() {
            out.push_str(&serde_json::to_string(&a)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn report(&self) -> String {
        let f = self.filtered();
        let agg = aggregate(&f.accepted, &self.hits);
        format!(
            "answers\t{}\naccepted\t{}\ndropped_uniform\t{}\ndropped_fast\t{}\ndropped_low_bonus\t{}\n\n{}",
            f.accepted.len() + f.dropped_uniform + f.dropped_fast + f.dropped_low_bonus,
            f.accepted.len(),
            f.dropped_uniform,
            f.dropped_fast,
            f.dropped_low_bonus,
            agg.to_table()
        )
    }
}
