//! Checkpoint manifests and the full inference pipeline:
//! classify context, predict the response label, decode a response.

use std::path::Path;

use empdial_core::classifier::{ClassifierModel, UtteranceClassifier};
use empdial_core::tokenizer::BpeTokenizer;
use empdial_core::{fingerprint, EmotionDistribution, LabelSet};
use empdial_tensor::{checkpoint, ParamStore, Scalar};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::decode::{beam_search, GenerationConfig};
use crate::generator::Generator;
use crate::input::build_input;
use crate::predictor::Predictor;
use crate::scoring::ResponseScorer;
use crate::{Error, Result};

/// Hashes of the tokenizer and label set a model was trained against.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tokenizer_hash: String,
    pub label_set_hash: String,
}

impl Provenance {
    pub fn of(tokenizer: &BpeTokenizer, labels: &LabelSet) -> Self {
        Self {
            tokenizer_hash: tokenizer.fingerprint(),
            label_set_hash: labels.fingerprint(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub kind: String,
    pub config: ModelConfig,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub checkpoint_hash: String,
    pub seed: u64,
}

pub(crate) fn save_checkpoint<T: Scalar>(
    dir: &Path,
    stem: &str,
    kind: &str,
    config: &ModelConfig,
    provenance: &Provenance,
    store: &ParamStore<T>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.ckpt"));
    checkpoint::save(store, &path)?;
    let manifest = ModelManifest {
        kind: kind.to_string(),
        config: config.clone(),
        provenance: provenance.clone(),
        checkpoint_hash: fingerprint(&checkpoint::encode(store)),
        seed: config.seed,
    };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_model_manifest(dir: &Path, stem: &str) -> Result<ModelManifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?)
}

pub(crate) fn read_manifest(dir: &Path, stem: &str, kind: &str) -> Result<(ModelConfig, Provenance)> {
    let m = read_model_manifest(dir, stem)?;
    if m.kind != kind {
        return Err(Error::ManifestMismatch(format!("{stem} holds a {}, expected a {kind}", m.kind)));
    }
    Ok((m.config, m.provenance))
}

pub(crate) fn load_checkpoint<T: Scalar>(dir: &Path, stem: &str, store: &mut ParamStore<T>) -> Result<()> {
    let m = read_model_manifest(dir, stem)?;
    let path = dir.join(format!("{stem}.ckpt"));
    let actual = empdial_core::file_fingerprint(&path)?;
    if actual != m.checkpoint_hash {
        return Err(Error::ManifestMismatch(format!("{} does not match its manifest hash", path.display())));
    }
    checkpoint::load_into(store, &path)?;
    Ok(())
}

pub struct ModelBundle {
    pub tokenizer: BpeTokenizer,
    pub labels: LabelSet,
    pub classifier: Box<dyn UtteranceClassifier + Send + Sync>,
    pub predictor: Predictor<f32>,
    pub generator: Generator<f32>,
    pub generation: GenerationConfig,
}

impl std::fmt::Debug for ModelBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelBundle")
            .field("labels", &self.labels.len())
            .field("generation", &self.generation)
            .finish_non_exhaustive()
    }
}

fn check(what: &str, model: &Provenance, config: &ModelConfig, expected: &Provenance, tokenizer: &BpeTokenizer, labels: &LabelSet) -> Result<()> {
    if model.tokenizer_hash != expected.tokenizer_hash {
        return Err(Error::ManifestMismatch(format!("{what} was trained with a different tokenizer")));
    }
    if model.label_set_hash != expected.label_set_hash {
        return Err(Error::ManifestMismatch(format!("{what} was trained with a different label set")));
    }
    if config.num_labels != labels.len() {
        return Err(Error::ManifestMismatch(format!("{what} has {} labels, label set has {}", config.num_labels, labels.len())));
    }
    if config.vocab_size < tokenizer.vocab_size() {
        return Err(Error::ManifestMismatch(format!(
            "{what} vocabulary {} is smaller than the tokenizer's {}",
            config.vocab_size,
            tokenizer.vocab_size()
        )));
    }
    Ok(())
}

impl ModelBundle {
    pub fn new(
        tokenizer: BpeTokenizer,
        labels: LabelSet,
        classifier: Box<dyn UtteranceClassifier + Send + Sync>,
        predictor: Predictor<f32>,
        generator: Generator<f32>,
        generation: GenerationConfig,
    ) -> Result<Self> {
        generation.validate()?;
        let expected = Provenance::of(&tokenizer, &labels);
        check("predictor", &predictor.provenance, &predictor.config, &expected, &tokenizer, &labels)?;
        check("generator", &generator.provenance, &generator.config, &expected, &tokenizer, &labels)?;
        Ok(Self {
            tokenizer,
            labels,
            classifier,
            predictor,
            generator,
            generation,
        })
    }

    /// Loads `tokenizer.json`, `classifier.*`, `predictor.*` and
    /// `generator.*` from one directory.
    pub fn load(dir: &Path, labels: LabelSet, generation: GenerationConfig) -> Result<Self> {
        let tokenizer = BpeTokenizer::load(&dir.join("tokenizer.json"))?;
        let classifier = ClassifierModel::load(dir, "classifier", &labels)?;
        let predictor = Predictor::load(dir, "predictor")?;
        let generator = Generator::load(dir, "generator")?;
        Self::new(tokenizer, labels, Box::new(classifier), predictor, generator, generation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    /// Label the decoder was conditioned on.
    pub label: String,
    /// Predictor's argmax, reported even when overridden.
    pub predicted: String,
    pub distribution: EmotionDistribution,
    pub context_labels: Vec<String>,
    pub text: String,
    pub tokens: Vec<u32>,
    pub truncated: bool,
}

pub fn generate(bundle: &ModelBundle, context: &[String], override_label: Option<usize>) -> Result<Response> {
    if context.is_empty() {
        return Err(Error::EmptyContext);
    }
    if let Some(l) = override_label {
        if l >= bundle.labels.len() {
            return Err(Error::Config(format!("label {l} outside the label set")));
        }
    }
    let utterances: Vec<Vec<u32>> = context.iter().map(|u| bundle.tokenizer.encode(u)).collect();
    let context_labels: Vec<usize> = context.iter().map(|u| bundle.classifier.distribution(u).argmax()).collect();
    let pred_input = build_input(&utterances, &context_labels, bundle.predictor.config.max_input_tokens)?;
    let distribution = bundle.predictor.distribution(&pred_input)?;
    let predicted = distribution.argmax();
    let label = override_label.unwrap_or(predicted);

    let gen_input = build_input(&utterances, &context_labels, bundle.generator.config.max_input_tokens)?;
    let scorer = ResponseScorer::new(&bundle.generator, &gen_input, label)?;
    let mut cfg = bundle.generation.clone();
    cfg.max_length = cfg.max_length.min(bundle.generator.config.max_target_tokens);
    let out = beam_search(&scorer, &cfg)?;
    Ok(Response {
        label: bundle.labels.name(label).to_string(),
        predicted: bundle.labels.name(predicted).to_string(),
        distribution,
        context_labels: context_labels.iter().map(|&l| bundle.labels.name(l).to_string()).collect(),
        text: bundle.tokenizer.decode(&out.tokens),
        tokens: out.tokens,
        truncated: out.truncated,
    })
}
