//! Pipeline configuration, read from TOML. Relative paths resolve against
//! the directory holding the config file.

use std::path::{Path, PathBuf};

use empdial_core::classifier::ClassifierConfig;
use empdial_core::curation::CleaningConfig;
use empdial_core::lexicon::LexiconConfig;
use empdial_eval::EvalConfig;
use empdial_model::{GenerationConfig, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory tree of subtitle files.
    pub corpus: Option<PathBuf>,
    /// Hand-labelled line pairs for the turn segmenter.
    pub segmenter_pairs: Option<PathBuf>,
    /// Pre-trained segmenter, used when no pairs are given.
    pub segmenter: Option<PathBuf>,
    /// Labelled sentences `{text, label}` for the utterance classifier.
    pub classifier_data: Option<PathBuf>,
    /// Intent seed sentences for lexicon expansion.
    pub intent_seeds: Option<PathBuf>,
    /// Label set file; the built-in 41 labels when absent.
    pub labels: Option<PathBuf>,
    /// Crowdsourced dialogs in dialog-record format, evaluated as `ED`.
    pub ed: Option<PathBuf>,
    /// Where stage outputs and manifests go.
    pub work_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda: f64,
}

impl Default for SegmenterSection {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.05,
            lambda: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub k: usize,
}

impl Default for SelectSection {
    fn default() -> Self {
        Self { k: 1_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self { vocab_size: 8000 }
    }
}

/// Architecture knobs; vocabulary and label counts come from the trained
/// tokenizer and the label set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_input_tokens: usize,
    pub max_target_tokens: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            num_layers: m.num_layers,
            num_heads: m.num_heads,
            d_model: m.d_model,
            d_ff: m.d_ff,
            dropout: m.dropout,
            max_input_tokens: m.max_input_tokens,
            max_target_tokens: m.max_target_tokens,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize, num_labels: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            dropout: self.dropout,
            max_input_tokens: self.max_input_tokens,
            max_target_tokens: self.max_target_tokens,
            vocab_size,
            num_labels,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// Dataset whose training split feeds the tokenizer and both models.
    pub dataset: String,
    #[serde(flatten)]
    pub optimizer: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset: "OSED".into(),
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    /// Bundle directory, relative to the work directory.
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub models: Vec<ModelEntry>,
    /// Datasets to score; every available split when empty.
    pub datasets: Vec<String>,
    /// Dialogs sampled from each test split for the combined rating set.
    pub per_set: usize,
    /// Cap on generated responses per dataset for the diversity and
    /// similarity metrics; 0 means the whole test split.
    pub max_generate: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            models: vec![ModelEntry {
                name: "Ours".into(),
                dir: "models".into(),
            }],
            datasets: Vec::new(),
            per_set: 2000,
            max_generate: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub addr: String,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads for data-parallel stages; 0 lets the runtime decide.
    pub threads: usize,
    pub paths: Paths,
    pub segmenter: SegmenterSection,
    pub cleaning: CleaningConfig,
    pub lexicon: LexiconConfig,
    pub classifier: ClassifierConfig,
    pub select: SelectSection,
    pub tokenizer: TokenizerSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub generation: GenerationConfig,
    pub evaluate: EvaluateSection,
    pub rating: EvalConfig,
    pub serve: ServeSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            paths: Paths::default(),
            segmenter: SegmenterSection::default(),
            cleaning: CleaningConfig::default(),
            lexicon: LexiconConfig::default(),
            classifier: ClassifierConfig::default(),
            select: SelectSection::default(),
            tokenizer: TokenizerSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            generation: GenerationConfig::default(),
            evaluate: EvaluateSection::default(),
            rating: EvalConfig::default(),
            serve: ServeSection::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p.as_mut() {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` and anchors its relative paths at the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.anchor(base);
        Ok(cfg)
    }

    pub fn anchor(&mut self, base: &Path) {
        let p = &mut self.paths;
        for field in [
            &mut p.corpus,
            &mut p.segmenter_pairs,
            &mut p.segmenter,
            &mut p.classifier_data,
            &mut p.intent_seeds,
            &mut p.labels,
            &mut p.ed,
            &mut p.work_dir,
        ] {
            resolve(base, field);
        }
    }

    pub fn work_dir(&self) -> PathBuf {
        self.paths.work_dir.clone().unwrap_or_else(|| PathBuf::from("work"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.num_heads == 0 || self.model.d_model % self.model.num_heads != 0 {
            return Err(Error::Config("model.d_model must be divisible by model.num_heads".into()));
        }
        if self.tokenizer.vocab_size < 8 {
            return Err(Error::Config("tokenizer.vocab_size is too small".into()));
        }
        if self.evaluate.models.is_empty() {
            return Err(Error::Config("evaluate.models must name at least one model".into()));
        }
        self.generation.validate()?;
        self.rating.validate()?;
        Ok(())
    }
}
