//! Beam search with repeated n-gram blocking.

use std::cmp::Ordering;

use empdial_core::tokenizer::EOS;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub beam_size: usize,
    pub block_ngram: usize,
    /// Most tokens a hypothesis may hold, EOS included.
    pub max_length: usize,
    pub length_penalty: f64,
    pub eos: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            beam_size: 32,
            block_ngram: 4,
            max_length: 100,
            length_penalty: 0.0,
            eos: EOS,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.block_ngram < 2 {
            return Err(Error::Config("block_ngram must be at least 2".into()));
        }
        if self.max_length == 0 {
            return Err(Error::Config("max_length must be positive".into()));
        }
        Ok(())
    }
}

/// Next-token log-probabilities given the tokens generated so far. Tokens
/// that must never be produced should get `-inf`.
pub trait StepScorer {
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>>;

    fn log_probs_batch(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        prefixes.iter().map(|p| self.log_probs(p)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Generated tokens, EOS excluded.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamOutput {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// No hypothesis reached EOS within `max_length`.
    pub truncated: bool,
}

/// True if the n-gram ending at the last token already occurs earlier.
pub fn ends_with_repeat(tokens: &[u32], n: usize) -> bool {
    if tokens.len() <= n {
        return false;
    }
    let tail = &tokens[tokens.len() - n..];
    tokens[..tokens.len() - 1].windows(n).any(|w| w == tail)
}

pub fn has_repeated_ngram(tokens: &[u32], n: usize) -> bool {
    (n..=tokens.len()).any(|end| ends_with_repeat(&tokens[..end], n))
}

fn normalized(h: &BeamHypothesis, penalty: f64) -> f64 {
    if penalty == 0.0 {
        return h.log_prob;
    }
    let len = h.tokens.len() + usize::from(h.finished);
    h.log_prob / (len.max(1) as f64).powf(penalty)
}

struct Candidate {
    score: f64,
    parent: usize,
    token: u32,
}

/// Finished hypotheses leave the beam and only compete in the final ranking.
/// Candidates are ranked by score, ties broken by parent rank then token id,
/// which makes a beam of one identical to greedy argmax decoding.
pub fn beam_search<S: StepScorer + ?Sized>(scorer: &S, cfg: &GenerationConfig) -> Result<BeamOutput> {
    cfg.validate()?;
    let mut alive = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..cfg.max_length {
        let prefixes: Vec<&[u32]> = alive.iter().map(|h| h.tokens.as_slice()).collect();
        let scores = scorer.log_probs_batch(&prefixes)?;
        let mut cands = Vec::new();
        for (parent, (h, lp)) in alive.iter().zip(&scores).enumerate() {
            for (tok, &l) in lp.iter().enumerate() {
                let score = h.log_prob + l;
                if score == f64::NEG_INFINITY || score.is_nan() {
                    continue;
                }
                let token = tok as u32;
                if token != cfg.eos {
                    let mut ext = h.tokens.clone();
                    ext.push(token);
                    if ends_with_repeat(&ext, cfg.block_ngram) {
                        continue;
                    }
                }
                cands.push(Candidate { score, parent, token });
            }
        }
        cands.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.parent.cmp(&b.parent))
                .then(a.token.cmp(&b.token))
        });
        let mut next = Vec::with_capacity(cfg.beam_size);
        for c in cands {
            if next.len() == cfg.beam_size {
                break;
            }
            let parent = &alive[c.parent];
            if c.token == cfg.eos {
                finished.push(BeamHypothesis {
                    tokens: parent.tokens.clone(),
                    log_prob: c.score,
                    finished: true,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(c.token);
                next.push(BeamHypothesis {
                    tokens,
                    log_prob: c.score,
                    finished: false,
                });
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
        // without a length penalty scores only fall, so nothing alive can win
        if cfg.length_penalty == 0.0 {
            let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= alive[0].log_prob {
                break;
            }
        }
    }
    let pick = |pool: &[BeamHypothesis]| {
        pool.iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| {
                normalized(a, cfg.length_penalty)
                    .partial_cmp(&normalized(b, cfg.length_penalty))
                    .unwrap_or(Ordering::Equal)
                    .then(j.cmp(i))
            })
            .map(|(_, h)| h.clone())
    };
    if let Some(h) = pick(&finished) {
        return Ok(BeamOutput {
            tokens: h.tokens,
            log_prob: h.log_prob,
            truncated: false,
        });
    }
    match pick(&alive) {
        Some(h) => Ok(BeamOutput {
            tokens: h.tokens,
            log_prob: h.log_prob,
            truncated: true,
        }),
        None => Ok(BeamOutput {
            tokens: Vec::new(),
            log_prob: f64::NEG_INFINITY,
            truncated: true,
        }),
    }
}
