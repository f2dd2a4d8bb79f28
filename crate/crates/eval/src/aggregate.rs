use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::hits::{CandidateSource, Hit, Placement};
use crate::quality::ScoredAnswer;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Good, okay, bad.
    pub counts: [usize; 3],
    /// `None` when nothing was placed for this model and dataset.
    pub proportions: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    /// Keyed by model, then dataset.
    pub cells: BTreeMap<String, BTreeMap<String, Cell>>,
    pub answers: usize,
}

impl AggregateScores {
    pub fn cell(&self, model: &str, dataset: &str) -> Option<&Cell> {
        self.cells.get(model)?.get(dataset)
    }

    /// One row per model; good, okay and bad shares for each dataset.
    pub fn to_table(&self) -> String {
        let mut s = String::from("model");
        for d in &self.datasets {
            for p in ["good", "okay", "bad"] {
                let _ = write!(s, "\t{d}-{p}");
            }
        }
        s.push('\n');
        for m in &self.models {
            s.push_str(m);
            for d in &self.datasets {
                match self.cell(m, d).and_then(|c| c.proportions) {
                    Some(p) => p.iter().for_each(|x| {
                        let _ = write!(s, "\t{x:.4}");
                    }),
                    None => s.push_str("\t-\t-\t-"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Placement counts of model candidates per (model, source dataset), each
/// normalised over the three categories. Ground-truth candidates are skipped.
pub fn aggregate(accepted: &[ScoredAnswer], hits: &[Hit]) -> AggregateScores {
    let mut out = AggregateScores {
        answers: accepted.len(),
        ..Default::default()
    };
    for hit in hits {
        for task in &hit.tasks {
            if !out.datasets.contains(&task.source) {
                out.datasets.push(task.source.clone());
            }
            for c in &task.candidates {
                if let CandidateSource::Model(m) = &c.source {
                    if !out.models.contains(m) {
                        out.models.push(m.clone());
                    }
                }
            }
        }
    }
    out.models.sort();
    out.datasets.sort();
    for m in &out.models {
        let row = out.cells.entry(m.clone()).or_default();
        for d in &out.datasets {
            row.insert(d.clone(), Cell::default());
        }
    }
    for a in accepted {
        let hit = &hits[a.hit_id];
        for (task, placed) in hit.tasks.iter().zip(&a.answer.placements) {
            for c in &task.candidates {
                if let (CandidateSource::Model(m), Some(p)) = (&c.source, placed.get(&c.id)) {
                    let cell = out.cells.get_mut(m).unwrap().get_mut(&task.source).unwrap();
                    cell.counts[p.index()] += 1;
                }
            }
        }
    }
    for row in out.cells.values_mut() {
        for cell in row.values_mut() {
            let total: usize = cell.counts.iter().sum();
            if total > 0 {
                let t = total as f64;
                cell.proportions = Some(Placement::ALL.map(|p| cell.counts[p.index()] as f64 / t));
            }
        }
    }
    out
}
