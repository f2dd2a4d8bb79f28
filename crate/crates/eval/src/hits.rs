//! HIT construction: shuffle the combined test set, split it into HITs,
//! make sure each HIT holds enough bonus-eligible dialogs, then attach the
//! ground truth as an extra candidate on the bonus tasks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Good,
    Okay,
    Bad,
}

impl Placement {
    pub const ALL: [Placement; 3] = [Placement::Good, Placement::Okay, Placement::Bad];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalDialog {
    pub dialog_id: String,
    /// Dataset the dialog was drawn from.
    pub source: String,
    pub context: Vec<String>,
    pub ground_truth: String,
    /// Response per system name.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum CandidateSource {
    Model(String),
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    /// Opaque id shown to raters.
    pub id: String,
    pub text: String,
    pub source: CandidateSource,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub dialog_id: String,
    pub source: String,
    pub context: Vec<String>,
    pub candidates: Vec<Candidate>,
    pub bonus: bool,
}

impl Task {
    pub fn ground_truth_id(&self) -> Option<&str> {
        self.candidates
            .iter()
            .find(|c| c.source == CandidateSource::GroundTruth)
            .map(|c| c.id.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hit {
    pub hit_id: usize,
    pub tasks: Vec<Task>,
}

impl Hit {
    pub fn bonus_tasks(&self) -> impl Iterator<Item = (usize, &Task)> {
        self.tasks.iter().enumerate().filter(|(_, t)| t.bonus)
    }
}

/// Moves bonus-eligible dialogs from HITs with a surplus into HITs with a
/// shortfall, swapping out ineligible ones. Deterministic given the order.
fn rebalance(groups: &mut [Vec<EvalDialog>], eligible: &dyn Fn(&EvalDialog) -> bool, need: usize) -> Result<()> {
    let count = |g: &[EvalDialog]| g.iter().filter(|d| eligible(d)).count();
    let total: usize = groups.iter().map(|g| count(g)).sum();
    if total < need * groups.len() {
        return Err(Error::HitLayout(format!(
            "{} HITs need {} bonus-eligible dialogs, found {total}",
            groups.len(),
            need * groups.len()
        )));
    }
    for i in 0..groups.len() {
        while count(&groups[i]) < need {
            let donor = (0..groups.len())
                .find(|&d| d != i && count(&groups[d]) > need)
                .expect("surplus exists when the total suffices");
            let take = groups[donor].iter().rposition(|d| eligible(d)).unwrap();
            let give = groups[i].iter().rposition(|d| !eligible(d)).unwrap();
            let a = groups[donor].remove(take);
            let b = groups[i].remove(give);
            groups[i].push(a);
            groups[donor].push(b);
        }
    }
    Ok(())
}

pub fn build_hits(dialogs: &[EvalDialog], models: &[String], cfg: &EvalConfig, seed: u64) -> Result<Vec<Hit>> {
    cfg.validate()?;
    if dialogs.is_empty() || dialogs.len() % cfg.hit_size != 0 {
        return Err(Error::HitLayout(format!(
            "{} dialogs cannot be split into HITs of {}",
            dialogs.len(),
            cfg.hit_size
        )));
    }
    for d in dialogs {
        for m in models {
            if !d.outputs.contains_key(m) {
                return Err(Error::MissingOutput {
                    dialog: d.dialog_id.clone(),
                    model: m.clone(),
                });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = dialogs.to_vec();
    shuffled.shuffle(&mut rng);
    let mut groups: Vec<Vec<EvalDialog>> = shuffled.chunks(cfg.hit_size).map(<[EvalDialog]>::to_vec).collect();
    let eligible = |d: &EvalDialog| d.source == cfg.bonus_source;
    rebalance(&mut groups, &eligible, cfg.bonus_count)?;

    let mut hits = Vec::with_capacity(groups.len());
    for (hit_id, group) in groups.into_iter().enumerate() {
        let mut pool: Vec<usize> = (0..group.len()).filter(|&k| eligible(&group[k])).collect();
        pool.shuffle(&mut rng);
        pool.truncate(cfg.bonus_count);
        let mut tasks = Vec::with_capacity(group.len());
        for (k, d) in group.into_iter().enumerate() {
            let bonus = pool.contains(&k);
            let mut cands: Vec<(String, CandidateSource)> = models
                .iter()
                .map(|m| (d.outputs[m].clone(), CandidateSource::Model(m.clone())))
                .collect();
            if bonus {
                cands.push((d.ground_truth.clone(), CandidateSource::GroundTruth));
            }
            cands.shuffle(&mut rng);
            let candidates = cands
                .into_iter()
                .enumerate()
                .map(|(c, (text, source))| Candidate {
                    id: format!("h{hit_id}t{k}c{c}"),
                    text,
                    source,
                })
                .collect();
            tasks.push(Task {
                dialog_id: d.dialog_id,
                source: d.source,
                context: d.context,
                candidates,
                bonus,
            });
        }
        hits.push(Hit { hit_id, tasks });
    }
    Ok(hits)
}

pub fn read_hits(path: &std::path::Path) -> Result<Vec<Hit>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn write_hits(path: &std::path::Path, hits: &[Hit]) -> Result<()> {
    let mut out = String::new();
    for h in hits {
        out.push_str(&serde_json::to_string(h)?);
        out.push('\n');
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}
