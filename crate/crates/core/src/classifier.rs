//! Sentence-level emotion/intent classifier: multinomial logistic regression
//! over signed-hashed word 1–2-grams and character 3–5-grams.

use std::collections::HashMap;
use std::path::Path;

use empdial_tensor::{checkpoint, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labels::{EmotionDistribution, LabelSet};
use crate::{Error, Result};

/// Anything that maps an utterance to a label distribution.
pub trait UtteranceClassifier {
    fn distribution(&self, text: &str) -> EmotionDistribution;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelledSentence {
    pub text: String,
    pub label: String,
}

impl LabelledSentence {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// log2 of the hashed feature space.
    pub hash_bits: u32,
    pub word_ngrams: (usize, usize),
    pub char_ngrams: (usize, usize),
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hash_bits: 18,
            word_ngrams: (1, 2),
            char_ngrams: (3, 5),
            learning_rate: 0.5,
            l2: 1e-6,
            max_epochs: 30,
            patience: 3,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for p in parts {
        for &b in *p {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercased word tokens; punctuation characters become their own tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() || c == '\'' {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Sparse feature vector: (hashed index, signed value), L2-normalised.
pub fn featurize(text: &str, cfg: &ClassifierConfig) -> Vec<(usize, f32)> {
    let mask = (1u64 << cfg.hash_bits) - 1;
    let mut acc: HashMap<usize, f32> = HashMap::new();
    let mut add = |h: u64| {
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        *acc.entry((h & mask) as usize).or_insert(0.0) += sign;
    };
    let words = word_tokens(text);
    for n in cfg.word_ngrams.0..=cfg.word_ngrams.1 {
        for w in words.windows(n) {
            let joined = w.join(" ");
            add(fnv1a(&[b"w", joined.as_bytes()]));
        }
    }
    let padded: Vec<char> = format!(" {} ", words.join(" ")).chars().collect();
    for n in cfg.char_ngrams.0..=cfg.char_ngrams.1 {
        for w in padded.windows(n) {
            let s: String = w.iter().collect();
            add(fnv1a(&[b"c", s.as_bytes()]));
        }
    }
    let mut feats: Vec<(usize, f32)> = acc.into_iter().filter(|(_, v)| *v != 0.0).collect();
    feats.sort_unstable_by_key(|(i, _)| *i);
    let norm = feats.iter().map(|(_, v)| v * v).sum::<f32>().sqrt();
    if norm > 0.0 {
        feats.iter_mut().for_each(|(_, v)| *v /= norm);
    }
    feats
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    pub labels: LabelSet,
    /// Row-major `[2^hash_bits, labels]`.
    weights: Vec<f32>,
    bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub distribution: EmotionDistribution,
    /// Set when the input had no features (empty sentence).
    pub empty_input: bool,
}

#[derive(Serialize, Deserialize)]
struct ClassifierManifest {
    config: ClassifierConfig,
    labels: Vec<String>,
    label_set_hash: String,
}

impl ClassifierModel {
    pub fn zeros(labels: LabelSet, config: ClassifierConfig) -> Self {
        let l = labels.len();
        Self {
            weights: vec![0.0; (1usize << config.hash_bits) * l],
            bias: vec![0.0; l],
            config,
            labels,
        }
    }

    fn scores(&self, feats: &[(usize, f32)]) -> Vec<f64> {
        let l = self.labels.len();
        let mut s: Vec<f64> = self.bias.iter().map(|&b| b as f64).collect();
        for &(i, v) in feats {
            let row = &self.weights[i * l..(i + 1) * l];
            for (acc, &w) in s.iter_mut().zip(row) {
                *acc += (w * v) as f64;
            }
        }
        s
    }

    pub fn classify(&self, sentence: &str) -> Classification {
        let feats = featurize(sentence, &self.config);
        if feats.is_empty() {
            return Classification {
                distribution: EmotionDistribution::uniform(self.labels.len()),
                empty_input: true,
            };
        }
        Classification {
            distribution: EmotionDistribution::from_logits(&self.scores(&feats)),
            empty_input: false,
        }
    }

    fn nll(&self, data: &[(Vec<(usize, f32)>, usize)]) -> f64 {
        let total: f64 = data
            .iter()
            .map(|(f, y)| {
                let lp = empdial_tensor::log_softmax_row(&self.scores(f));
                -lp[*y]
            })
            .sum();
        total / data.len().max(1) as f64
    }

    fn sgd_step(&mut self, feats: &[(usize, f32)], y: usize, lr: f32, l2: f32) {
        let l = self.labels.len();
        let p = EmotionDistribution::from_logits(&self.scores(feats));
        let grad: Vec<f32> = p
            .probs()
            .iter()
            .enumerate()
            .map(|(j, &pj)| pj as f32 - if j == y { 1.0 } else { 0.0 })
            .collect();
        for &(i, v) in feats {
            let row = &mut self.weights[i * l..(i + 1) * l];
            for (w, g) in row.iter_mut().zip(&grad) {
                *w -= lr * (g * v + l2 * *w);
            }
        }
        for (b, g) in self.bias.iter_mut().zip(&grad) {
            *b -= lr * g;
        }
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let l = self.labels.len();
        let mut store = ParamStore::<f32>::new();
        store.add("weights", Tensor::new(vec![self.weights.len() / l, l], self.weights.clone())?)?;
        store.add("bias", Tensor::new(vec![l], self.bias.clone())?)?;
        checkpoint::save(&store, &dir.join(format!("{stem}.ckpt")))?;
        let manifest = ClassifierManifest {
            config: self.config.clone(),
            labels: self.labels.names().to_vec(),
            label_set_hash: self.labels.fingerprint(),
        };
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str, labels: &LabelSet) -> Result<Self> {
        let manifest: ClassifierManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        if manifest.label_set_hash != labels.fingerprint() {
            return Err(Error::LabelSet("classifier was trained with a different label set".into()));
        }
        let store: ParamStore<f32> = checkpoint::load(&dir.join(format!("{stem}.ckpt")))?;
        let weights = store.by_name("weights")?.data().to_vec();
        let bias = store.by_name("bias")?.data().to_vec();
        if weights.len() != (1usize << manifest.config.hash_bits) * labels.len() {
            return Err(Error::LabelSet("classifier weight shape does not match config".into()));
        }
        Ok(Self {
            config: manifest.config,
            labels: labels.clone(),
            weights,
            bias,
        })
    }
}

impl UtteranceClassifier for ClassifierModel {
    fn distribution(&self, text: &str) -> EmotionDistribution {
        self.classify(text).distribution
    }
}

/// Trains with per-example SGD; the epoch with the lowest validation loss is
/// kept. Data smaller than ten examples validates on the training set.
pub fn train_classifier(
    data: &[LabelledSentence],
    labels: &LabelSet,
    config: ClassifierConfig,
) -> Result<ClassifierModel> {
    let mut encoded = Vec::with_capacity(data.len());
    let mut seen = vec![false; labels.len()];
    for s in data {
        let y = labels.require(&s.label)?;
        seen[y] = true;
        encoded.push((featurize(&s.text, &config), y));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::MissingLabel(labels.name(missing).to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(&mut rng);
    let n_valid = if encoded.len() < 10 {
        0
    } else {
        ((encoded.len() as f64 * config.validation_fraction).round() as usize).min(encoded.len() - 1)
    };
    let valid: Vec<_> = order[..n_valid].iter().map(|&i| encoded[i].clone()).collect();
    let train: Vec<_> = order[n_valid..].iter().map(|&i| encoded[i].clone()).collect();
    let valid = if valid.is_empty() { train.clone() } else { valid };

    let mut model = ClassifierModel::zeros(labels.clone(), config.clone());
    let mut best = (f64::INFINITY, model.clone());
    let mut since_best = 0;
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for _ in 0..config.max_epochs {
        idx.shuffle(&mut rng);
        for &i in &idx {
            let (f, y) = &train[i];
            model.sgd_step(f, *y, config.learning_rate as f32, config.l2 as f32);
        }
        let loss = model.nll(&valid);
        if loss < best.0 - 1e-9 {
            best = (loss, model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok(best.1)
}

/// Externally computed per-utterance distributions, keyed by utterance text.
#[derive(Clone, Debug, Default)]
pub struct DistributionTable {
    pub labels: usize,
    map: HashMap<String, EmotionDistribution>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionRecord {
    pub utterance_key: String,
    pub probs: Vec<f64>,
}

impl DistributionTable {
    pub fn new(labels: usize) -> Self {
        Self {
            labels,
            map: HashMap::new(),
        }
    }

    pub fn from_records(labels: usize, records: Vec<DistributionRecord>) -> Result<Self> {
        let mut t = Self::new(labels);
        for r in records {
            if r.probs.len() != labels {
                return Err(Error::LabelSet(format!(
                    "distribution for `{}` has {} entries, expected {labels}",
                    r.utterance_key,
                    r.probs.len()
                )));
            }
            t.map.insert(r.utterance_key, EmotionDistribution::new(r.probs)?);
        }
        Ok(t)
    }

    pub fn insert(&mut self, key: String, dist: EmotionDistribution) {
        self.map.insert(key, dist);
    }

    pub fn get(&self, key: &str) -> Option<&EmotionDistribution> {
        self.map.get(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn to_records(&self) -> Vec<DistributionRecord> {
        let mut v: Vec<_> = self
            .map
            .iter()
            .map(|(k, d)| DistributionRecord {
                utterance_key: k.clone(),
                probs: d.probs().to_vec(),
            })
            .collect();
        v.sort_by(|a, b| a.utterance_key.cmp(&b.utterance_key));
        v
    }
}

impl UtteranceClassifier for DistributionTable {
    /// Unknown utterances fall back to the uniform distribution.
    fn distribution(&self, text: &str) -> EmotionDistribution {
        match self.map.get(text) {
            Some(d) => d.clone(),
            None => {
                log::warn!("no precomputed distribution for utterance `{text}`");
                EmotionDistribution::uniform(self.labels)
            }
        }
    }
}
