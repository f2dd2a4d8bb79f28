//! Utterance cleaning, truncation and corpus statistics.
//!
//! Rules run per utterance in this order:
//!
//! 1. collapse redundant whitespace
//! 2. drop narration starting with "previously on"
//! 3. drop exact repeats of the previous turn
//! 4. drop utterances not starting with a letter, digit, `'` or `"`
//! 5. strip a leading `character :` speaker tag
//! 6. drop utterances with fewer than 2 or more than 100 whitespace tokens
//! 7. drop utterances where letters make up less than 60% of non-space characters
//! 8. drop utterances where distinct tokens make up less than 2/3 of tokens
//! 9. keep at most the first 100 occurrences of any utterance corpus-wide
//!
//! Removing an utterance discards every later utterance of its dialog.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::UtteranceClassifier;
use crate::dialog::Dialog;
use crate::labels::LabelSet;
use crate::segment::Turn;
use crate::tokenizer::TokenCounter;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    RedundantSpaces,
    PreviouslyOn,
    RepeatsPrevious,
    BadFirstChar,
    CharacterPrefix,
    Length,
    AlphabetRatio,
    DistinctTokens,
    FrequencyCap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_alpha_ratio: f64,
    /// Distinct-token ratio threshold as a fraction `num/den`, kept exact.
    pub min_distinct_num: usize,
    pub min_distinct_den: usize,
    pub max_frequency: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            min_tokens: 2,
            max_tokens: 100,
            min_alpha_ratio: 0.6,
            min_distinct_num: 2,
            min_distinct_den: 3,
            max_frequency: 100,
        }
    }
}

/// Per-rule counters. Rewriting rules (1 and 5) count rewritten utterances;
/// the others count removals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub redundant_spaces: usize,
    pub previously_on: usize,
    pub repeats_previous: usize,
    pub bad_first_char: usize,
    pub character_prefix: usize,
    pub length: usize,
    pub alphabet_ratio: usize,
    pub distinct_tokens: usize,
    pub frequency_cap: usize,
    /// Utterances discarded because an earlier utterance of the dialog was removed.
    pub truncated: usize,
    pub dialogs_in: usize,
    pub dialogs_out: usize,
    pub turns_in: usize,
    pub turns_out: usize,
}

impl CleaningReport {
    fn bump(&mut self, rule: Rule) {
        *match rule {
            Rule::RedundantSpaces => &mut self.redundant_spaces,
            Rule::PreviouslyOn => &mut self.previously_on,
            Rule::RepeatsPrevious => &mut self.repeats_previous,
            Rule::BadFirstChar => &mut self.bad_first_char,
            Rule::CharacterPrefix => &mut self.character_prefix,
            Rule::Length => &mut self.length,
            Rule::AlphabetRatio => &mut self.alphabet_ratio,
            Rule::DistinctTokens => &mut self.distinct_tokens,
            Rule::FrequencyCap => &mut self.frequency_cap,
        } += 1;
    }

    fn merge(&mut self, o: &CleaningReport) {
        self.redundant_spaces += o.redundant_spaces;
        self.previously_on += o.previously_on;
        self.repeats_previous += o.repeats_previous;
        self.bad_first_char += o.bad_first_char;
        self.character_prefix += o.character_prefix;
        self.length += o.length;
        self.alphabet_ratio += o.alphabet_ratio;
        self.distinct_tokens += o.distinct_tokens;
        self.frequency_cap += o.frequency_cap;
        self.truncated += o.truncated;
    }

    pub fn removed(&self) -> usize {
        self.previously_on
            + self.repeats_previous
            + self.bad_first_char
            + self.length
            + self.alphabet_ratio
            + self.distinct_tokens
            + self.frequency_cap
    }
}

impl fmt::Display for CleaningReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[cleaning]")?;
        writeln!(f, "dialogs_in = {}", self.dialogs_in)?;
        writeln!(f, "dialogs_out = {}", self.dialogs_out)?;
        writeln!(f, "turns_in = {}", self.turns_in)?;
        writeln!(f, "turns_out = {}", self.turns_out)?;
        writeln!(f, "rule1_redundant_spaces_rewritten = {}", self.redundant_spaces)?;
        writeln!(f, "rule2_previously_on_removed = {}", self.previously_on)?;
        writeln!(f, "rule3_repeats_removed = {}", self.repeats_previous)?;
        writeln!(f, "rule4_bad_first_char_removed = {}", self.bad_first_char)?;
        writeln!(f, "rule5_character_prefix_stripped = {}", self.character_prefix)?;
        writeln!(f, "rule6_length_removed = {}", self.length)?;
        writeln!(f, "rule7_alphabet_ratio_removed = {}", self.alphabet_ratio)?;
        writeln!(f, "rule8_distinct_tokens_removed = {}", self.distinct_tokens)?;
        writeln!(f, "rule9_frequency_cap_removed = {}", self.frequency_cap)?;
        writeln!(f, "truncated_after_removal = {}", self.truncated)
    }
}

pub fn normalize_spaces(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn starts_with_previously_on(text: &str) -> bool {
    text.get(..13).is_some_and(|p| p.eq_ignore_ascii_case("previously on"))
}

pub fn has_valid_first_char(text: &str) -> bool {
    text.chars()
        .next()
        .is_some_and(|c| c.is_alphabetic() || c.is_ascii_digit() || c == '\'' || c == '"')
}

/// Remainder after a `character :` speaker tag: one to three tokens made of
/// letters and periods, then a colon.
pub fn strip_character_prefix(text: &str) -> Option<&str> {
    let (head, rest) = text.split_once(':')?;
    let tokens: Vec<&str> = head.split_whitespace().collect();
    if tokens.is_empty() || tokens.len() > 3 {
        return None;
    }
    let ok = tokens
        .iter()
        .all(|t| t.chars().all(|c| c.is_alphabetic() || c == '.') && t.chars().any(char::is_alphabetic));
    ok.then(|| rest.trim())
}

/// Letters over non-whitespace characters.
pub fn alphabet_ratio(text: &str) -> f64 {
    let (mut letters, mut total) = (0usize, 0usize);
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if c.is_alphabetic() {
            letters += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        letters as f64 / total as f64
    }
}

fn distinct_ok(tokens: &[&str], cfg: &CleaningConfig) -> bool {
    let mut uniq: Vec<&str> = tokens.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    uniq.len() * cfg.min_distinct_den >= cfg.min_distinct_num * tokens.len()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Keep(String),
    Remove(Rule),
}

/// Runs rules 1–8 on one utterance. `previous` is the cleaned text of the
/// preceding kept turn. When a speaker tag is stripped the earlier rules are
/// re-checked on the remainder, so cleaning reaches a fixed point.
pub fn clean_utterance(
    text: &str,
    previous: Option<&str>,
    cfg: &CleaningConfig,
    report: &mut CleaningReport,
) -> Verdict {
    let mut t = normalize_spaces(text);
    if t != text {
        report.bump(Rule::RedundantSpaces);
    }
    loop {
        if starts_with_previously_on(&t) {
            return Verdict::Remove(Rule::PreviouslyOn);
        }
        if previous == Some(t.as_str()) {
            return Verdict::Remove(Rule::RepeatsPrevious);
        }
        if !has_valid_first_char(&t) {
            return Verdict::Remove(Rule::BadFirstChar);
        }
        match strip_character_prefix(&t) {
            Some(rest) => {
                report.bump(Rule::CharacterPrefix);
                t = normalize_spaces(rest);
            }
            None => break,
        }
    }
    let tokens: Vec<&str> = t.split(' ').collect();
    if tokens.len() < cfg.min_tokens || tokens.len() > cfg.max_tokens {
        return Verdict::Remove(Rule::Length);
    }
    if alphabet_ratio(&t) < cfg.min_alpha_ratio {
        return Verdict::Remove(Rule::AlphabetRatio);
    }
    if !distinct_ok(&tokens, cfg) {
        return Verdict::Remove(Rule::DistinctTokens);
    }
    Verdict::Keep(t)
}

struct Prefix {
    kept: Vec<Turn>,
    dropped_after: usize,
    report: CleaningReport,
}

fn clean_prefix(dialog: &Dialog, cfg: &CleaningConfig) -> Prefix {
    let mut report = CleaningReport::default();
    let mut kept: Vec<Turn> = Vec::new();
    for (i, turn) in dialog.turns.iter().enumerate() {
        let prev = kept.last().map(|t| t.text.as_str());
        match clean_utterance(&turn.text, prev, cfg, &mut report) {
            Verdict::Keep(text) => kept.push(Turn {
                text,
                ..turn.clone()
            }),
            Verdict::Remove(rule) => {
                report.bump(rule);
                return Prefix {
                    kept,
                    dropped_after: dialog.turns.len() - i - 1,
                    report,
                };
            }
        }
    }
    Prefix {
        kept,
        dropped_after: 0,
        report,
    }
}

/// Cleans a corpus. Output dialogs are in traversal order (doc_id, then
/// dialog_index); rules 1–8 run in parallel per dialog and the frequency cap
/// runs as a sequential pass, matching a fully sequential run.
pub fn clean_dialogs(mut dialogs: Vec<Dialog>, cfg: &CleaningConfig) -> (Vec<Dialog>, CleaningReport) {
    dialogs.sort_by(|a, b| (&a.doc_id, a.dialog_index).cmp(&(&b.doc_id, b.dialog_index)));
    let mut report = CleaningReport {
        dialogs_in: dialogs.len(),
        turns_in: dialogs.iter().map(|d| d.turns.len()).sum(),
        ..Default::default()
    };
    let prefixes: Vec<Prefix> = dialogs.par_iter().map(|d| clean_prefix(d, cfg)).collect();

    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for (dialog, prefix) in dialogs.into_iter().zip(prefixes) {
        report.merge(&prefix.report);
        report.truncated += prefix.dropped_after;
        let mut turns = Vec::with_capacity(prefix.kept.len());
        let total = prefix.kept.len();
        for (j, turn) in prefix.kept.into_iter().enumerate() {
            let count = seen.entry(turn.text.clone()).or_insert(0);
            if *count >= cfg.max_frequency {
                report.bump(Rule::FrequencyCap);
                report.truncated += total - j - 1;
                break;
            }
            *count += 1;
            turns.push(turn);
        }
        if !turns.is_empty() {
            report.turns_out += turns.len();
            out.push(Dialog { turns, ..dialog });
        }
    }
    report.dialogs_out = out.len();
    (out, report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogs: usize,
    pub turns: usize,
    pub tokens: usize,
    pub avg_turns_per_dialog: f64,
    pub avg_tokens_per_turn: f64,
    pub avg_tokens_per_dialog: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn compute_corpus_stats(dialogs: &[Dialog], tokenizer: &(impl TokenCounter + ?Sized)) -> CorpusStats {
    let turns: usize = dialogs.iter().map(|d| d.turns.len()).sum();
    let tokens: usize = dialogs
        .iter()
        .flat_map(|d| d.texts())
        .map(|t| tokenizer.count_tokens(t))
        .sum();
    CorpusStats {
        dialogs: dialogs.len(),
        turns,
        tokens,
        avg_turns_per_dialog: ratio(turns, dialogs.len()),
        avg_tokens_per_turn: ratio(tokens, turns),
        avg_tokens_per_dialog: ratio(tokens, dialogs.len()),
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[corpus]")?;
        writeln!(f, "total_dialogs = {}", self.dialogs)?;
        writeln!(f, "total_turns = {}", self.turns)?;
        writeln!(f, "total_tokens = {}", self.tokens)?;
        writeln!(f, "avg_turns_per_dialog = {:.2}", self.avg_turns_per_dialog)?;
        writeln!(f, "avg_tokens_per_turn = {:.2}", self.avg_tokens_per_turn)?;
        writeln!(f, "avg_tokens_per_dialog = {:.2}", self.avg_tokens_per_dialog)
    }
}

/// Histogram of the argmax label of every dialog's last utterance.
pub fn emotion_distribution_report(
    dialogs: &[Dialog],
    classifier: &(impl UtteranceClassifier + ?Sized),
    labels: &LabelSet,
) -> Vec<usize> {
    let mut hist = vec![0usize; labels.len()];
    for d in dialogs {
        if let Some(last) = d.last_utterance() {
            hist[classifier.distribution(last).argmax()] += 1;
        }
    }
    hist
}

pub fn format_histogram(hist: &[usize], labels: &LabelSet) -> String {
    let mut rows: Vec<(usize, &str)> = hist.iter().zip(labels.names()).map(|(&c, n)| (c, n.as_str())).collect();
    rows.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
    let mut s = String::from("[last_utterance_labels]\n");
    for (c, n) in rows {
        s.push_str(&format!("{n} = {c}\n"));
    }
    s
}
