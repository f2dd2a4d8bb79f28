//! Flattening a dialog context into the four parallel id sequences.
//!
//! Layout: `BOS u1 SEP u2 SEP ... um SEP`. BOS takes the ids of the first
//! kept utterance and every SEP the ids of the utterance it closes. Speaker
//! parity is counted over the full context, so dropping old utterances never
//! flips the segment of the ones that remain.

use empdial_core::tokenizer::{BOS, SEP};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEncoding {
    pub tokens: Vec<usize>,
    pub positions: Vec<usize>,
    pub emotions: Vec<usize>,
    pub segments: Vec<usize>,
    /// Oldest utterances removed to fit the budget.
    pub dropped_utterances: usize,
    /// The single remaining utterance lost its leading tokens.
    pub truncated: bool,
    /// Segment id of whoever speaks next.
    pub responder_segment: usize,
}

impl InputEncoding {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn build_input(utterances: &[Vec<u32>], labels: &[usize], max_tokens: usize) -> Result<InputEncoding> {
    if utterances.is_empty() {
        return Err(Error::EmptyContext);
    }
    if utterances.len() != labels.len() {
        return Err(Error::Core(empdial_core::Error::LengthMismatch(utterances.len(), labels.len())));
    }
    if max_tokens < 2 {
        return Err(Error::Config("input budget must be at least 2".into()));
    }
    let m = utterances.len();
    let cost = |u: &Vec<u32>| u.len() + 1;
    let mut total = 1 + utterances.iter().map(cost).sum::<usize>();
    let mut first = 0;
    while total > max_tokens && first + 1 < m {
        total -= cost(&utterances[first]);
        first += 1;
    }
    let mut enc = InputEncoding {
        tokens: Vec::with_capacity(total.min(max_tokens)),
        positions: Vec::new(),
        emotions: Vec::new(),
        segments: Vec::new(),
        dropped_utterances: first,
        truncated: false,
        responder_segment: m % 2,
    };
    let push = |enc: &mut InputEncoding, tok: u32, emo: usize, seg: usize| {
        enc.tokens.push(tok as usize);
        enc.emotions.push(emo);
        enc.segments.push(seg);
    };
    push(&mut enc, BOS, labels[first], first % 2);
    for i in first..m {
        let mut toks: &[u32] = &utterances[i];
        let room = max_tokens - 2;
        if toks.len() > room {
            // only reachable for the last remaining utterance
            toks = &toks[toks.len() - room..];
            enc.truncated = true;
        }
        for &t in toks {
            push(&mut enc, t, labels[i], i % 2);
        }
        push(&mut enc, SEP, labels[i], i % 2);
    }
    enc.positions = (0..enc.tokens.len()).collect();
    Ok(enc)
}
