//! Byte-pair-encoding tokenizer over characters with an end-of-word marker.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub trait TokenCounter {
    fn count_tokens(&self, text: &str) -> usize;
}

/// Counts whitespace-separated tokens.
#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceTokenizer;

impl TokenCounter for WhitespaceTokenizer {
    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
/// Separator between context utterances; doubles as end-of-sequence.
pub const SEP: u32 = 2;
pub const EOS: u32 = SEP;
pub const UNK: u32 = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
const END_OF_WORD: &str = "</w>";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BpeTokenizer {
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    #[serde(skip)]
    ranks: HashMap<(String, String), usize>,
}

impl PartialEq for BpeTokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.merges == other.merges
    }
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == n {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_pair(symbols: &mut Vec<String>, a: &str, b: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == a && symbols[i + 1] == b {
            let merged = format!("{a}{b}");
            symbols[i] = merged;
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

impl BpeTokenizer {
    /// Learns merges until the vocabulary (specials included) reaches
    /// `vocab_size` or no pair occurs twice. Ties go to the
    /// lexicographically smallest pair.
    pub fn train<'a>(texts: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in texts {
            for w in t.split_whitespace() {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(Vec<String>, usize)> =
            counts.into_iter().map(|(w, c)| (word_symbols(w), c)).collect();

        // every seen character gets both its inner and word-final symbol
        let alphabet: BTreeSet<String> = words
            .iter()
            .flat_map(|(s, _)| s.iter())
            .flat_map(|sym| {
                let base = sym.strip_suffix(END_OF_WORD).unwrap_or(sym).to_string();
                let fin = format!("{base}{END_OF_WORD}");
                [base, fin]
            })
            .collect();
        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        vocab.extend(alphabet);
        let mut known: BTreeSet<String> = vocab.iter().cloned().collect();
        let mut merges = Vec::new();

        while vocab.len() < vocab_size {
            let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
            for (syms, c) in &words {
                for w in syms.windows(2) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += c;
                }
            }
            let best = pairs
                .into_iter()
                .filter(|&(_, c)| c >= 2)
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let Some(((a, b), _)) = best else { break };
            let (a, b) = (a.to_string(), b.to_string());
            for (syms, _) in words.iter_mut() {
                merge_pair(syms, &a, &b);
            }
            let merged = format!("{a}{b}");
            if known.insert(merged.clone()) {
                vocab.push(merged);
            }
            merges.push((a, b));
        }
        let mut tok = Self {
            vocab,
            merges,
            index: HashMap::new(),
            ranks: HashMap::new(),
        };
        tok.rebuild();
        tok
    }

    fn rebuild(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        self.ranks = self
            .merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut syms = word_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w[0].clone(), w[1].clone())))
                .min_by_key(|(r, _, _)| *r);
            let Some((_, a, b)) = best else { break };
            merge_pair(&mut syms, &a, &b);
        }
        out.extend(syms.iter().map(|s| self.index.get(s).copied().unwrap_or(UNK)));
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            self.encode_word(w, &mut out);
        }
        out
    }

    /// Joins subword pieces, skipping special tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            if (id as usize) < SPECIALS.len() && id != UNK {
                continue;
            }
            let piece = self.token(id).unwrap_or("<unk>");
            match piece.strip_suffix(END_OF_WORD) {
                Some(p) => {
                    s.push_str(p);
                    s.push(' ');
                }
                None => s.push_str(piece),
            }
        }
        s.trim_end().to_string()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tokenizer serialises")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let mut t: Self = serde_json::from_str(json)?;
        if t.vocab.len() < SPECIALS.len() || t.vocab[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Tokenizer("vocabulary must start with the special tokens".into()));
        }
        t.rebuild();
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self.to_json().as_bytes())
    }
}

impl TokenCounter for BpeTokenizer {
    fn count_tokens(&self, text: &str) -> usize {
        self.encode(text).len()
    }
}
