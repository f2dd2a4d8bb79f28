//! Automatic response metrics, predictor scores, and dataset splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labels::LabelSet;
use crate::{Error, Result};

/// Supplies per-token log-probabilities of the gold target of one example,
/// end-of-sequence token included.
pub trait SequenceScorer<E> {
    fn token_log_probs(&self, example: &E) -> Result<Vec<f64>>;
}

/// `exp(total NLL / total tokens)` over a dataset.
pub fn perplexity<E, S: SequenceScorer<E> + ?Sized>(scorer: &S, dataset: &[E]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("perplexity dataset"));
    }
    let (mut nll, mut count) = (0.0, 0usize);
    for ex in dataset {
        let lps = scorer.token_log_probs(ex)?;
        nll -= lps.iter().sum::<f64>();
        count += lps.len();
    }
    if count == 0 {
        return Err(Error::EmptyInput("perplexity tokens"));
    }
    Ok((nll / count as f64).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distinct {
    pub value: f64,
    pub distinct: usize,
    pub total: usize,
    /// No n-grams at all; the value is reported as 0.
    pub empty: bool,
}

/// Corpus-level ratio of unique n-grams to all n-grams, whitespace tokens.
pub fn distinct_n<S: AsRef<str>>(responses: &[S], n: usize) -> Distinct {
    assert!(n >= 1, "distinct-n needs n >= 1");
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0;
    for r in responses {
        let toks: Vec<&str> = r.as_ref().split_whitespace().collect();
        for w in toks.windows(n) {
            total += 1;
            seen.insert(w.to_vec());
        }
    }
    if total == 0 {
        log::warn!("distinct-{n}: no {n}-grams in {} responses", responses.len());
        return Distinct {
            value: 0.0,
            distinct: 0,
            total: 0,
            empty: true,
        };
    }
    Distinct {
        value: seen.len() as f64 / total as f64,
        distinct: seen.len(),
        total,
        empty: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub value: f64,
    pub zero_vector: bool,
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<Similarity> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine similarity with a zero vector");
        return Ok(Similarity {
            value: 0.0,
            zero_vector: true,
        });
    }
    Ok(Similarity {
        value: (dot / (na * nb)).clamp(-1.0, 1.0),
        zero_vector: false,
    })
}

pub trait Embedder {
    fn embed(&self, sentence: &str) -> Vec<f64>;
}

pub fn sentence_similarity<E: Embedder + ?Sized>(embedder: &E, generated: &str, reference: &str) -> Result<Similarity> {
    cosine(&embedder.embed(generated), &embedder.embed(reference))
}

/// Mean pairwise similarity over aligned generated/reference lists.
pub fn corpus_similarity<E: Embedder + ?Sized, S: AsRef<str>>(
    embedder: &E,
    generated: &[S],
    reference: &[S],
) -> Result<f64> {
    if generated.len() != reference.len() {
        return Err(Error::LengthMismatch(generated.len(), reference.len()));
    }
    if generated.is_empty() {
        return Err(Error::EmptyInput("similarity pairs"));
    }
    let mut total = 0.0;
    for (g, r) in generated.iter().zip(reference) {
        total += sentence_similarity(embedder, g.as_ref(), r.as_ref())?.value;
    }
    Ok(total / generated.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub text: String,
    pub vector: Vec<f64>,
}

/// Embeddings computed elsewhere, looked up by exact sentence text.
#[derive(Clone, Debug, Default)]
pub struct PrecomputedEmbedder {
    dim: usize,
    table: std::collections::HashMap<String, Vec<f64>>,
}

impl PrecomputedEmbedder {
    pub fn from_records(records: Vec<VectorRecord>) -> Result<Self> {
        let dim = records.first().map_or(0, |r| r.vector.len());
        let mut table = std::collections::HashMap::new();
        for r in records {
            if r.vector.len() != dim {
                return Err(Error::LengthMismatch(dim, r.vector.len()));
            }
            table.insert(r.text, r.vector);
        }
        Ok(Self { dim, table })
    }
}

impl Embedder for PrecomputedEmbedder {
    /// Unknown sentences embed to the zero vector.
    fn embed(&self, sentence: &str) -> Vec<f64> {
        self.table.get(sentence).cloned().unwrap_or_else(|| vec![0.0; self.dim])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_label: Vec<LabelScores>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-label scores (0 where undefined) and their gold-support-weighted mean.
pub fn weighted_prf(predicted: &[usize], gold: &[usize], labels: &LabelSet) -> Result<PrfReport> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch(predicted.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(Error::EmptyInput("prf labels"));
    }
    let l = labels.len();
    let (mut tp, mut pred_n, mut gold_n) = (vec![0; l], vec![0; l], vec![0; l]);
    for (&p, &g) in predicted.iter().zip(gold) {
        if p >= l || g >= l {
            return Err(Error::UnknownLabel(format!("label index {}", p.max(g))));
        }
        pred_n[p] += 1;
        gold_n[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let per_label: Vec<LabelScores> = (0..l)
        .map(|i| {
            let precision = ratio(tp[i], pred_n[i]);
            let recall = ratio(tp[i], gold_n[i]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            LabelScores {
                precision,
                recall,
                f1,
                support: gold_n[i],
            }
        })
        .collect();
    let n = gold.len() as f64;
    let weigh = |f: fn(&LabelScores) -> f64| per_label.iter().map(|s| f(s) * s.support as f64).sum::<f64>() / n;
    Ok(PrfReport {
        precision: weigh(|s| s.precision),
        recall: weigh(|s| s.recall),
        f1: weigh(|s| s.f1),
        per_label,
    })
}

/// Four-digit score without the leading zero, e.g. `.1484`.
pub fn format_score(x: f64) -> String {
    let s = format!("{x:.4}");
    match s.strip_prefix('0') {
        Some(rest) => rest.to_string(),
        None => s,
    }
}

/// One row of the predictor table: name, then P/R/F-1 per dataset.
pub fn format_prf_row(model: &str, per_dataset: &[PrfReport]) -> String {
    let mut row = model.to_string();
    for r in per_dataset {
        for v in [r.precision, r.recall, r.f1] {
            write!(row, " & {}", format_score(v)).unwrap();
        }
    }
    row
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle; validation and test each get a tenth of the items
/// (rounded down) and training keeps the rest.
pub fn split_dataset<T>(mut items: Vec<T>, seed: u64) -> Split<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let tenth = items.len() / 10;
    let test = items.split_off(items.len() - tenth);
    let valid = items.split_off(items.len() - tenth);
    Split {
        train: items,
        valid,
        test,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tagged<T> {
    pub source: String,
    pub item: T,
}

/// Samples `per_set` items from every named set, tags them, and shuffles.
pub fn build_combined_test<T: Clone>(sets: &[(String, Vec<T>)], per_set: usize, seed: u64) -> Result<Vec<Tagged<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_set * sets.len());
    for (name, items) in sets {
        if items.len() < per_set {
            return Err(Error::InsufficientTestSet {
                set: name.clone(),
                available: items.len(),
                requested: per_set,
            });
        }
        for item in items.choose_multiple(&mut rng, per_set) {
            out.push(Tagged {
                source: name.clone(),
                item: item.clone(),
            });
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsCell {
    pub perplexity: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub similarity: f64,
}

/// Automatic-metric cells keyed by (model, dataset).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub cells: BTreeMap<String, BTreeMap<String, MetricsCell>>,
}

impl MetricsReport {
    pub fn insert(&mut self, model: &str, dataset: &str, cell: MetricsCell) {
        if !self.models.iter().any(|m| m == model) {
            self.models.push(model.to_string());
        }
        if !self.datasets.iter().any(|d| d == dataset) {
            self.datasets.push(dataset.to_string());
        }
        self.cells
            .entry(model.to_string())
            .or_default()
            .insert(dataset.to_string(), cell);
    }

    pub fn get(&self, model: &str, dataset: &str) -> Option<&MetricsCell> {
        self.cells.get(model)?.get(dataset)
    }

    /// Rows of `model<TAB>dataset<TAB>metric<TAB>value`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model\tdataset\tmetric\tvalue\n");
        for m in &self.models {
            for d in &self.datasets {
                if let Some(c) = self.get(m, d) {
                    for (k, v) in [("ppl", c.perplexity), ("d1", c.distinct1), ("d2", c.distinct2), ("ses", c.similarity)] {
                        writeln!(out, "{m}\t{d}\t{k}\t{v}").unwrap();
                    }
                }
            }
        }
        out
    }

    /// Models as rows, one PPL/D1/D2/SES group per dataset.
    pub fn to_text(&self) -> String {
        let width = self.models.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut out = format!("{:width$}", "Model");
        for d in &self.datasets {
            write!(out, " | {d:^31}").unwrap();
        }
        out.push('\n');
        write!(out, "{:width$}", "").unwrap();
        for _ in &self.datasets {
            write!(out, " | {:>7} {:>7} {:>7} {:>7}", "PPL", "D1", "D2", "SES").unwrap();
        }
        out.push('\n');
        for m in &self.models {
            write!(out, "{m:width$}").unwrap();
            for d in &self.datasets {
                match self.get(m, d) {
                    Some(c) => write!(
                        out,
                        " | {:>7.2} {:>7} {:>7} {:>7}",
                        c.perplexity,
                        format_score(c.distinct1),
                        format_score(c.distinct2),
                        format_score(c.similarity)
                    )
                    .unwrap(),
                    None => write!(out, " | {:>31}", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }
}
