//! Bootstraps intent-labelled sentences from a small seed set by matching the
//! seeds' most frequent n-grams against an unlabelled corpus.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::classifier::{word_tokens, LabelledSentence};
use crate::labels::{LabelSet, Role};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexiconConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub min_count: usize,
    /// Keep at most this many n-grams per intent, most frequent first.
    pub top_per_intent: Option<usize>,
    pub cap_per_intent: usize,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self {
            n_min: 1,
            n_max: 4,
            min_count: 3,
            top_per_intent: None,
            cap_per_intent: 1500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramCount {
    pub ngram: String,
    pub count: usize,
}

/// Per-intent frequent n-grams, keyed by intent name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentLexicon {
    pub entries: BTreeMap<String, Vec<NgramCount>>,
}

impl IntentLexicon {
    pub fn contains(&self, intent: &str, ngram: &str) -> bool {
        self.entries
            .get(intent)
            .is_some_and(|v| v.iter().any(|e| e.ngram == ngram))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    pub lexicon: IntentLexicon,
    /// Seeds followed by the auto-labelled corpus sentences.
    pub labelled: Vec<LabelledSentence>,
    pub added: usize,
    pub ambiguous: usize,
}

fn ngrams(tokens: &[String], n_min: usize, n_max: usize) -> impl Iterator<Item = String> + '_ {
    (n_min.max(1)..=n_max).flat_map(move |n| tokens.windows(n).map(|w| w.join(" ")))
}

pub fn expand_intent_lexicon(
    seeds: &[LabelledSentence],
    corpus: &[String],
    labels: &LabelSet,
    cfg: &LexiconConfig,
) -> Result<Expansion> {
    let intents: Vec<usize> = labels.indices(Role::Intent).collect();
    let mut counts: Vec<HashMap<String, usize>> = vec![HashMap::new(); labels.len()];
    for s in seeds {
        let y = labels.require(&s.label)?;
        if labels.role(y) != Role::Intent {
            return Err(Error::LabelSet(format!("seed label `{}` is not an intent", s.label)));
        }
        // count each n-gram once per seed sentence
        let toks = word_tokens(&s.text);
        let uniq: HashSet<String> = ngrams(&toks, cfg.n_min, cfg.n_max).collect();
        for g in uniq {
            *counts[y].entry(g).or_insert(0) += 1;
        }
    }
    if let Some(&missing) = intents.iter().find(|&&i| counts[i].is_empty()) {
        return Err(Error::MissingIntentSeeds(labels.name(missing).to_string()));
    }

    let mut lexicon = IntentLexicon::default();
    let mut matcher: HashMap<String, Vec<usize>> = HashMap::new();
    for &i in &intents {
        let mut list: Vec<NgramCount> = counts[i]
            .iter()
            .filter(|(_, &c)| c >= cfg.min_count)
            .map(|(g, &c)| NgramCount { ngram: g.clone(), count: c })
            .collect();
        list.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.ngram.cmp(&b.ngram)));
        if let Some(top) = cfg.top_per_intent {
            list.truncate(top);
        }
        for e in &list {
            matcher.entry(e.ngram.clone()).or_default().push(i);
        }
        lexicon.entries.insert(labels.name(i).to_string(), list);
    }

    let seed_texts: HashSet<&str> = seeds.iter().map(|s| s.text.as_str()).collect();
    let mut labelled = seeds.to_vec();
    let mut per_intent = vec![0usize; labels.len()];
    let (mut added, mut ambiguous) = (0, 0);
    for sentence in corpus {
        if seed_texts.contains(sentence.as_str()) {
            continue;
        }
        let toks = word_tokens(sentence);
        let mut hit: Vec<usize> = ngrams(&toks, cfg.n_min, cfg.n_max)
            .filter_map(|g| matcher.get(&g))
            .flatten()
            .copied()
            .collect();
        hit.sort_unstable();
        hit.dedup();
        match hit.as_slice() {
            [] => {}
            [i] => {
                if per_intent[*i] < cfg.cap_per_intent {
                    per_intent[*i] += 1;
                    added += 1;
                    labelled.push(LabelledSentence::new(sentence.clone(), labels.name(*i)));
                }
            }
            _ => ambiguous += 1,
        }
    }
    Ok(Expansion {
        lexicon,
        labelled,
        added,
        ambiguous,
    })
}
