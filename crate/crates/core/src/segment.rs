//! Turn segmentation: a linear same-speaker classifier over consecutive
//! subtitle lines, and the merge of lines into turns.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::subtitle::SubtitleLine;
use crate::{Error, Result};

pub const NUM_FEATURES: usize = 9;
pub const MAX_GAP_SECS: f64 = 10.0;

/// Feature vector for a consecutive line pair:
///
/// | idx | feature |
/// |-----|---------|
/// | 0 | gap between `prev.end` and `next.start` in seconds, clamped to `[0, 10]` (0 when missing) |
/// | 1 | 1 if either timestamp is missing |
/// | 2 | `prev` ends with `.`, `!` or `?` (not an ellipsis) |
/// | 3 | `prev` ends with `...`, `…`, `,`, `-` or `:` |
/// | 4 | `next` starts with a lowercase letter |
/// | 5 | `next` starts with a dialogue dash (`-` or `—`) |
/// | 6 | `prev` whitespace token count / 10 |
/// | 7 | `next` whitespace token count / 10 |
/// | 8 | `prev` ends with a hyphen directly after a letter |
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnPairFeatures(pub [f64; NUM_FEATURES]);

impl TurnPairFeatures {
    pub fn gap_secs(&self) -> f64 {
        self.0[0]
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn extract_pair_features(prev: &SubtitleLine, next: &SubtitleLine) -> TurnPairFeatures {
    let (gap, missing) = match (prev.end_ms, next.start_ms) {
        (Some(end), Some(start)) => {
            let secs = (start as f64 - end as f64) / 1000.0;
            (secs.clamp(0.0, MAX_GAP_SECS), false)
        }
        _ => (0.0, true),
    };
    let p = prev.text.trim_end();
    let n = next.text.trim_start();
    let ellipsis = p.ends_with("...") || p.ends_with('…');
    let terminal = !ellipsis && p.ends_with(['.', '!', '?']);
    let continuation = ellipsis || p.ends_with([',', '-', ':']);
    let mid_word_hyphen = {
        let mut rev = p.chars().rev();
        rev.next() == Some('-') && rev.next().is_some_and(char::is_alphabetic)
    };
    let first = n.chars().next();
    TurnPairFeatures([
        gap,
        flag(missing),
        flag(terminal),
        flag(continuation),
        flag(first.is_some_and(char::is_lowercase)),
        flag(matches!(first, Some('-') | Some('—'))),
        p.split_whitespace().count() as f64 / 10.0,
        n.split_whitespace().count() as f64 / 10.0,
        flag(mid_word_hyphen),
    ])
}

/// Linear classifier: `w·x + b > 0` means "same turn".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl SegmenterModel {
    pub fn constant(same_turn: bool) -> Self {
        Self {
            weights: vec![0.0; NUM_FEATURES],
            bias: if same_turn { 1.0 } else { -1.0 },
        }
    }

    pub fn score(&self, x: &TurnPairFeatures) -> f64 {
        self.weights.iter().zip(&x.0).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn same_turn(&self, x: &TurnPairFeatures) -> bool {
        self.score(x) > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmenterTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SegmenterTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.05,
            lambda: 1e-4,
            seed: 0,
        }
    }
}

/// L2-regularised hinge loss minimised by stochastic subgradient descent.
/// Label `true` = same turn.
pub fn train_segmenter(
    pairs: &[(TurnPairFeatures, bool)],
    config: SegmenterTrainConfig,
) -> Result<SegmenterModel> {
    let positives = pairs.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == pairs.len() {
        return Err(Error::SingleClass);
    }
    let mut w = [0.0f64; NUM_FEATURES];
    let mut b = 0.0f64;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let eta = config.learning_rate;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, label) = &pairs[i];
            let y = if *label { 1.0 } else { -1.0 };
            let margin = y * (w.iter().zip(&x.0).map(|(a, v)| a * v).sum::<f64>() + b);
            let shrink = 1.0 - eta * config.lambda;
            w.iter_mut().for_each(|a| *a *= shrink);
            if margin < 1.0 {
                for (a, v) in w.iter_mut().zip(&x.0) {
                    *a += eta * y * v;
                }
                b += eta * y;
            }
        }
    }
    Ok(SegmenterModel {
        weights: w.to_vec(),
        bias: b,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub text: String,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
}

/// Removes a leading dialogue dash ("- Hello." → "Hello.").
pub fn strip_dialogue_dash(text: &str) -> &str {
    let t = text.trim_start();
    match t.strip_prefix('-').or_else(|| t.strip_prefix('—')) {
        Some(rest) => rest.trim_start(),
        None => t,
    }
}

/// Merges lines where `same[i]` says line `i+1` continues line `i`.
pub fn merge_lines(lines: &[SubtitleLine], same: &[bool]) -> Vec<Turn> {
    assert_eq!(same.len() + 1, lines.len().max(1), "one decision per adjacent pair");
    let mut turns: Vec<Turn> = Vec::new();
    let mut current: Option<Turn> = None;
    for (i, line) in lines.iter().enumerate() {
        let text = strip_dialogue_dash(&line.text);
        let merge = i > 0 && same[i - 1];
        match (&mut current, merge) {
            (Some(turn), true) => {
                if !text.is_empty() {
                    if !turn.text.is_empty() {
                        turn.text.push(' ');
                    }
                    turn.text.push_str(text);
                }
                turn.end_ms = line.end_ms;
            }
            _ => {
                if let Some(done) = current.take() {
                    turns.push(done);
                }
                current = Some(Turn {
                    text: text.to_string(),
                    start_ms: line.start_ms,
                    end_ms: line.end_ms,
                });
            }
        }
    }
    turns.extend(current);
    turns.retain(|t| !t.text.is_empty());
    turns
}

pub fn segment_turns(lines: &[SubtitleLine], model: &SegmenterModel) -> Vec<Turn> {
    if lines.is_empty() {
        return Vec::new();
    }
    let same: Vec<bool> = lines
        .windows(2)
        .map(|w| model.same_turn(&extract_pair_features(&w[0], &w[1])))
        .collect();
    merge_lines(lines, &same)
}
