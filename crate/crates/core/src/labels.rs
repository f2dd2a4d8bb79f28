//! The 41-way emotion/intent label space and probability distributions over it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NUM_LABELS: usize = 41;

const EMOTIONS: [&str; 32] = [
    "surprised",
    "excited",
    "annoyed",
    "proud",
    "angry",
    "sad",
    "grateful",
    "lonely",
    "impressed",
    "afraid",
    "disgusted",
    "confident",
    "terrified",
    "hopeful",
    "anxious",
    "disappointed",
    "joyful",
    "prepared",
    "guilty",
    "furious",
    "nostalgic",
    "jealous",
    "anticipating",
    "embarrassed",
    "content",
    "devastated",
    "sentimental",
    "caring",
    "trusting",
    "ashamed",
    "apprehensive",
    "faithful",
];

const INTENTS: [&str; 8] = [
    "questioning",
    "agreeing",
    "acknowledging",
    "sympathizing",
    "encouraging",
    "consoling",
    "suggesting",
    "wishing",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Emotion,
    Intent,
    Neutral,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Emotion => "emotion",
            Role::Intent => "intent",
            Role::Neutral => "neutral",
        })
    }
}

/// Ordered label names with their role partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
    roles: Vec<Role>,
}

impl Default for LabelSet {
    fn default() -> Self {
        let mut names: Vec<String> = EMOTIONS.iter().map(|s| s.to_string()).collect();
        let mut roles = vec![Role::Emotion; EMOTIONS.len()];
        names.extend(INTENTS.iter().map(|s| s.to_string()));
        roles.extend([Role::Intent; INTENTS.len()]);
        names.push("neutral".into());
        roles.push(Role::Neutral);
        Self { names, roles }
    }
}

impl LabelSet {
    pub fn new(entries: Vec<(String, Role)>) -> Result<Self> {
        let (names, roles): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let set = Self { names, roles };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for n in &self.names {
            if !seen.insert(n.as_str()) {
                return Err(Error::LabelSet(format!("duplicate label `{n}`")));
            }
        }
        let count = |r| self.roles.iter().filter(|&&x| x == r).count();
        if count(Role::Neutral) != 1 {
            return Err(Error::LabelSet("exactly one neutral label required".into()));
        }
        if self.names.len() < 2 {
            return Err(Error::LabelSet("at least two labels required".into()));
        }
        Ok(())
    }

    /// Parses `name<TAB>role` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(name), Some(role), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::LabelSet(format!("line {}: expected `name role`", i + 1)));
            };
            let role = match role {
                "emotion" => Role::Emotion,
                "intent" => Role::Intent,
                "neutral" => Role::Neutral,
                other => {
                    return Err(Error::LabelSet(format!("line {}: unknown role `{other}`", i + 1)))
                }
            };
            entries.push((name.to_string(), role));
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        self.names
            .iter()
            .zip(&self.roles)
            .map(|(n, r)| format!("{n}\t{r}\n"))
            .collect()
    }

    /// Hex SHA-256 of the canonical label file text.
    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self.to_text().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn role(&self, idx: usize) -> Role {
        self.roles[idx]
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index(name).ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn indices(&self, role: Role) -> impl Iterator<Item = usize> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(move |(_, &r)| r == role)
            .map(|(i, _)| i)
    }

    pub fn neutral(&self) -> usize {
        self.indices(Role::Neutral).next().expect("validated")
    }
}

/// Probability vector over the label set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionDistribution(Vec<f64>);

impl EmotionDistribution {
    /// Validates non-negativity and unit mass (±1e-6).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::LabelSet("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::LabelSet(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, idx: usize) -> Self {
        let mut v = vec![0.0; n];
        v[idx] = 1.0;
        Self(v)
    }

    /// Softmax of raw scores.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Self(exps.into_iter().map(|e| e / sum).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn mass(&self, labels: &LabelSet, role: Role) -> f64 {
        labels.indices(role).map(|i| self.0[i]).sum()
    }
}

/// Probability mass on the emotion labels.
pub fn emotionality(dist: &EmotionDistribution, labels: &LabelSet) -> f64 {
    dist.mass(labels, Role::Emotion)
}

/// Mean utterance emotionality of a dialog.
pub fn dialog_emotionality(dists: &[EmotionDistribution], labels: &LabelSet) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::EmptyDialog);
    }
    let total: f64 = dists.iter().map(|d| emotionality(d, labels)).sum();
    Ok(total / dists.len() as f64)
}
