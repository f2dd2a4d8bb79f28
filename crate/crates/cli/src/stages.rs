//! The pipeline stages. Each reads artifacts from the work directory (or
//! user inputs named in the config), writes its own, and records a manifest.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use empdial_core::classifier::{train_classifier, ClassifierModel, DistributionRecord, DistributionTable, LabelledSentence, UtteranceClassifier};
use empdial_core::corpus::{ingest_documents, list_documents, load_segmenter, save_segmenter, LabelledPair};
use empdial_core::curation::{clean_dialogs, compute_corpus_stats, emotion_distribution_report, format_histogram};
use empdial_core::dialog::Dialog;
use empdial_core::labels::{dialog_emotionality, emotionality};
use empdial_core::lexicon::expand_intent_lexicon;
use empdial_core::metrics::{build_combined_test, corpus_similarity, distinct_n, format_prf_row, perplexity, split_dataset, weighted_prf, MetricsCell, MetricsReport, PrfReport};
use empdial_core::records::{dialogs_from_turn_records, examples_from_dialog, final_turn_example, read_jsonl, write_jsonl, TrainingExample, TurnRecord};
use empdial_core::segment::{train_segmenter, SegmenterTrainConfig};
use empdial_core::tokenizer::{BpeTokenizer, WhitespaceTokenizer};
use empdial_core::topk::select_top_k;
use empdial_core::LabelSet;
use empdial_eval::hits::write_hits;
use empdial_eval::{build_hits, EvalDialog};
use empdial_model::scoring::{GeneratorScorer, SubwordMeanEmbedder};
use empdial_model::train::{encode_examples, train_generator, train_predictor, EncodedExample};
use empdial_model::{generate, Generator, ModelBundle, Predictor, Provenance};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ModelEntry, PipelineConfig};
use crate::manifest::{Input, Outcome, Workspace};
use crate::{Error, Result};

pub const TURNS: &str = "ingest/turns.jsonl";
pub const SEGMENTER: &str = "ingest/segmenter.json";
pub const INGEST_REPORT: &str = "ingest/report.txt";
pub const DIALOGS: &str = "curate/dialogs.jsonl";
pub const CURATE_REPORT: &str = "curate/report.txt";
pub const LEXICON: &str = "lexicon/intent_lexicon.json";
pub const EXPANDED: &str = "lexicon/expanded.jsonl";
pub const MODELS: &str = "models";
pub const CLASSIFIER_CKPT: &str = "models/classifier.ckpt";
pub const CLASSIFIER_JSON: &str = "models/classifier.json";
pub const DISTRIBUTIONS: &str = "classify/distributions.jsonl";
pub const CLASSIFY_REPORT: &str = "classify/report.txt";
pub const OSED: &str = "select/osed.jsonl";
pub const SELECT_REPORT: &str = "select/report.txt";
pub const TOKENIZER: &str = "models/tokenizer.json";
pub const GENERATOR_CKPT: &str = "models/generator.ckpt";
pub const GENERATOR_JSON: &str = "models/generator.json";
pub const GENERATOR_REPORT: &str = "models/generator_train.json";
pub const PREDICTOR_CKPT: &str = "models/predictor.ckpt";
pub const PREDICTOR_JSON: &str = "models/predictor.json";
pub const PREDICTOR_REPORT: &str = "models/predictor_train.json";
pub const METRICS_TSV: &str = "evaluate/metrics.tsv";
pub const METRICS_TXT: &str = "evaluate/metrics.txt";
pub const PRF_TXT: &str = "evaluate/predictor.txt";
pub const COMBINED: &str = "evaluate/combined.jsonl";
pub const HITS: &str = "hits/hits.jsonl";
pub const EVENTS: &str = "hits/events.jsonl";

pub const SPLIT_PARTS: [&str; 3] = ["train", "valid", "test"];

pub fn split_file(dataset: &str, part: &str) -> String {
    format!("splits/{dataset}.{part}.jsonl")
}

fn responses_file(model: &str, dataset: &str) -> String {
    format!("evaluate/responses/{model}.{dataset}.jsonl")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Curate,
    LexiconExpand,
    ClassifyTrain,
    ClassifyApply,
    SelectTop,
    Split,
    TrainTokenizer,
    TrainGenerator,
    TrainPredictor,
    Evaluate,
    BuildHits,
}

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::Ingest,
        Stage::Curate,
        Stage::LexiconExpand,
        Stage::ClassifyTrain,
        Stage::ClassifyApply,
        Stage::SelectTop,
        Stage::Split,
        Stage::TrainTokenizer,
        Stage::TrainGenerator,
        Stage::TrainPredictor,
        Stage::Evaluate,
        Stage::BuildHits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Curate => "curate",
            Stage::LexiconExpand => "lexicon-expand",
            Stage::ClassifyTrain => "classify-train",
            Stage::ClassifyApply => "classify-apply",
            Stage::SelectTop => "select-top",
            Stage::Split => "split",
            Stage::TrainTokenizer => "train-tokenizer",
            Stage::TrainGenerator => "train-generator",
            Stage::TrainPredictor => "train-predictor",
            Stage::Evaluate => "evaluate",
            Stage::BuildHits => "build-hits",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Per-model, per-dataset generation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub dialog_id: String,
    pub context: Vec<String>,
    pub reference: String,
    pub response: String,
    pub label: String,
    pub predicted: String,
}

fn dialog_id(source: &str, d: &Dialog) -> String {
    format!("{source}/{}#{}", d.doc_id, d.dialog_index)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config values serialise")
}

/// Classifier labels for every turn after the first.
fn label_examples(dialogs: &[Dialog], classifier: &(dyn UtteranceClassifier + Sync)) -> Vec<TrainingExample> {
    dialogs
        .par_iter()
        .flat_map_iter(|d| examples_from_dialog(d, |t| classifier.distribution(t).argmax()))
        .collect()
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub ws: Workspace,
    pub labels: LabelSet,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let labels = match &cfg.paths.labels {
            Some(p) => LabelSet::parse(&std::fs::read_to_string(p)?)?,
            None => LabelSet::default(),
        };
        let ws = Workspace::new(cfg.work_dir());
        Ok(Self { cfg, ws, labels })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.ws.path(rel)
    }

    fn label_input(&self) -> Vec<Input> {
        self.cfg
            .paths
            .labels
            .iter()
            .map(|p| Input::external("labels", p))
            .collect()
    }

    /// Datasets that exist for this configuration.
    pub fn datasets(&self) -> Vec<&'static str> {
        let mut v = vec!["OS", "OSED"];
        if self.cfg.paths.ed.is_some() {
            v.insert(0, "ED");
        }
        v
    }

    fn require(&self, opt: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        opt.clone()
            .ok_or_else(|| Error::Config(format!("paths.{key} is not set")))
    }

    pub fn run(&self, stage: Stage) -> Result<Outcome> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Curate => self.curate(),
            Stage::LexiconExpand => self.lexicon_expand(),
            Stage::ClassifyTrain => self.classify_train(),
            Stage::ClassifyApply => self.classify_apply(),
            Stage::SelectTop => self.select_top(),
            Stage::Split => self.split(),
            Stage::TrainTokenizer => self.train_tokenizer(),
            Stage::TrainGenerator => self.train_generator(),
            Stage::TrainPredictor => self.train_predictor(),
            Stage::Evaluate => self.evaluate(),
            Stage::BuildHits => self.build_hits(),
        }
    }

    /// Stages that apply to this configuration, in dependency order.
    pub fn stages(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| *s != Stage::LexiconExpand || self.cfg.paths.intent_seeds.is_some())
            .collect()
    }

    pub fn run_all(&self) -> Result<Vec<(Stage, Outcome)>> {
        self.stages()
            .into_iter()
            .map(|s| Ok((s, self.run(s)?)))
            .collect()
    }

    pub fn ingest(&self) -> Result<Outcome> {
        let corpus = self.require(&self.cfg.paths.corpus, "corpus")?;
        let mut inputs = vec![Input::external("corpus", &corpus)];
        let pairs = self.cfg.paths.segmenter_pairs.clone();
        let pretrained = self.cfg.paths.segmenter.clone();
        let params = match (&pairs, &pretrained) {
            (Some(p), _) => {
                inputs.push(Input::external("segmenter_pairs", p));
                to_value(&self.cfg.segmenter)
            }
            (None, Some(p)) => {
                inputs.push(Input::external("segmenter", p));
                serde_json::Value::Null
            }
            (None, None) => {
                return Err(Error::Config(
                    "ingest needs paths.segmenter_pairs to train a segmenter or paths.segmenter to load one".into(),
                ))
            }
        };
        self.ws.run_stage("ingest", &inputs, params, self.cfg.seed, &[TURNS, SEGMENTER, INGEST_REPORT], || {
            let model = match &pairs {
                Some(p) => {
                    let labelled: Vec<LabelledPair> = read_jsonl(p)?;
                    let features: Vec<_> = labelled.iter().map(LabelledPair::features).collect();
                    let s = &self.cfg.segmenter;
                    train_segmenter(
                        &features,
                        SegmenterTrainConfig {
                            epochs: s.epochs,
                            learning_rate: s.learning_rate,
                            lambda: s.lambda,
                            seed: self.cfg.seed,
                        },
                    )?
                }
                None => load_segmenter(pretrained.as_ref().unwrap())?,
            };
            let docs = list_documents(&corpus)?;
            let out = ingest_documents(&docs, &model);
            write_jsonl(&self.path(TURNS), &out.turns)?;
            save_segmenter(&model, &self.path(SEGMENTER))?;
            let mut report = format!(
                "[ingest]\ndocuments = {}\nlines = {}\nskipped_cues = {}\nturns = {}\nfailed_documents = {}\n",
                out.documents,
                out.lines,
                out.skipped_cues,
                out.turns.len(),
                out.failed.len()
            );
            for (doc, err) in &out.failed {
                let _ = writeln!(report, "failed: {doc}: {err}");
            }
            write_text(&self.path(INGEST_REPORT), &report)
        })
    }

    pub fn curate(&self) -> Result<Outcome> {
        let inputs = [Input::artifact(TURNS, "ingest")];
        self.ws.run_stage("curate", &inputs, to_value(&self.cfg.cleaning), self.cfg.seed, &[DIALOGS, CURATE_REPORT], || {
            let turns: Vec<TurnRecord> = read_jsonl(&self.path(TURNS))?;
            let (dialogs, report) = clean_dialogs(dialogs_from_turn_records(turns), &self.cfg.cleaning);
            write_jsonl(&self.path(DIALOGS), &dialogs)?;
            let stats = compute_corpus_stats(&dialogs, &WhitespaceTokenizer);
            write_text(&self.path(CURATE_REPORT), &format!("{report}\n{stats}"))
        })
    }

    pub fn lexicon_expand(&self) -> Result<Outcome> {
        let seeds = self.require(&self.cfg.paths.intent_seeds, "intent_seeds")?;
        let mut inputs = vec![Input::external("intent_seeds", &seeds), Input::artifact(DIALOGS, "curate")];
        inputs.extend(self.label_input());
        self.ws.run_stage("lexicon-expand", &inputs, to_value(&self.cfg.lexicon), self.cfg.seed, &[LEXICON, EXPANDED], || {
            let seed_sentences: Vec<LabelledSentence> = read_jsonl(&seeds)?;
            let dialogs: Vec<Dialog> = read_jsonl(&self.path(DIALOGS))?;
            let mut seen = HashSet::new();
            let corpus: Vec<String> = dialogs
                .iter()
                .flat_map(|d| d.texts())
                .filter(|t| seen.insert(*t))
                .map(str::to_string)
                .collect();
            let exp = expand_intent_lexicon(&seed_sentences, &corpus, &self.labels, &self.cfg.lexicon)?;
            log::info!("lexicon-expand: {} sentences added, {} ambiguous", exp.added, exp.ambiguous);
            write_json(&self.path(LEXICON), &exp.lexicon)?;
            Ok(write_jsonl(&self.path(EXPANDED), &exp.labelled)?)
        })
    }

    fn classifier_config(&self) -> empdial_core::classifier::ClassifierConfig {
        let mut c = self.cfg.classifier.clone();
        c.seed = self.cfg.seed;
        c
    }

    pub fn classify_train(&self) -> Result<Outcome> {
        let data = self.require(&self.cfg.paths.classifier_data, "classifier_data")?;
        let mut inputs = vec![Input::external("classifier_data", &data)];
        let expanded = self.cfg.paths.intent_seeds.is_some();
        if expanded {
            inputs.push(Input::artifact(EXPANDED, "lexicon-expand"));
        }
        inputs.extend(self.label_input());
        let cfg = self.classifier_config();
        self.ws.run_stage("classify-train", &inputs, to_value(&cfg), self.cfg.seed, &[CLASSIFIER_CKPT, CLASSIFIER_JSON], || {
            let mut sentences: Vec<LabelledSentence> = read_jsonl(&data)?;
            if expanded {
                sentences.extend(read_jsonl::<LabelledSentence>(&self.path(EXPANDED))?);
            }
            let model = train_classifier(&sentences, &self.labels, cfg.clone())?;
            model.save(&self.path(MODELS), "classifier")?;
            Ok(())
        })
    }

    fn classifier_inputs(&self) -> Vec<Input> {
        let mut v = vec![
            Input::artifact(CLASSIFIER_CKPT, "classify-train"),
            Input::artifact(CLASSIFIER_JSON, "classify-train"),
        ];
        v.extend(self.label_input());
        v
    }

    fn load_classifier(&self) -> Result<ClassifierModel> {
        Ok(ClassifierModel::load(&self.path(MODELS), "classifier", &self.labels)?)
    }

    pub fn classify_apply(&self) -> Result<Outcome> {
        let mut inputs = vec![Input::artifact(DIALOGS, "curate")];
        inputs.extend(self.classifier_inputs());
        self.ws.run_stage("classify-apply", &inputs, serde_json::Value::Null, self.cfg.seed, &[DISTRIBUTIONS, CLASSIFY_REPORT], || {
            let classifier = self.load_classifier()?;
            let dialogs: Vec<Dialog> = read_jsonl(&self.path(DIALOGS))?;
            let mut seen = HashSet::new();
            let unique: Vec<&str> = dialogs.iter().flat_map(|d| d.texts()).filter(|t| seen.insert(*t)).collect();
            let mut records: Vec<DistributionRecord> = unique
                .par_iter()
                .map(|t| DistributionRecord {
                    utterance_key: t.to_string(),
                    probs: classifier.distribution(t).probs().to_vec(),
                })
                .collect();
            records.sort_by(|a, b| a.utterance_key.cmp(&b.utterance_key));
            write_jsonl(&self.path(DISTRIBUTIONS), &records)?;
            let hist = emotion_distribution_report(&dialogs, &classifier, &self.labels);
            let mean = if records.is_empty() {
                0.0
            } else {
                records
                    .iter()
                    .map(|r| r.probs.iter().enumerate().filter(|(i, _)| self.labels.role(*i) == empdial_core::Role::Emotion).map(|(_, p)| p).sum::<f64>())
                    .sum::<f64>()
                    / records.len() as f64
            };
            let report = format!(
                "[classify]\nutterances = {}\nmean_utterance_emotionality = {mean:.6}\n\n{}",
                records.len(),
                format_histogram(&hist, &self.labels)
            );
            write_text(&self.path(CLASSIFY_REPORT), &report)
        })
    }

    pub fn select_top(&self) -> Result<Outcome> {
        let mut inputs = vec![Input::artifact(DIALOGS, "curate"), Input::artifact(DISTRIBUTIONS, "classify-apply")];
        inputs.extend(self.label_input());
        self.ws.run_stage("select-top", &inputs, to_value(&self.cfg.select), self.cfg.seed, &[OSED, SELECT_REPORT], || {
            let table = DistributionTable::from_records(self.labels.len(), read_jsonl(&self.path(DISTRIBUTIONS))?)?;
            let dialogs: Vec<Dialog> = read_jsonl(&self.path(DIALOGS))?;
            let mut scored = Vec::with_capacity(dialogs.len());
            for d in dialogs {
                let dists = d
                    .texts()
                    .map(|t| {
                        table
                            .get(t)
                            .cloned()
                            .ok_or_else(|| Error::Config(format!("no distribution for utterance {t:?}; rerun classify-apply")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                scored.push((dialog_emotionality(&dists, &self.labels)?, d));
            }
            let top = select_top_k(scored, self.cfg.select.k);
            let mut report = format!("[select]\nk = {}\nselected = {}\n", self.cfg.select.k, top.len());
            if let (Some(first), Some(last)) = (top.first(), top.last()) {
                let _ = write!(report, "max_emotionality = {:.6}\nmin_emotionality = {:.6}\n", first.score, last.score);
            }
            let chosen: Vec<&Dialog> = top.iter().map(|s| &s.item).collect();
            write_jsonl(&self.path(OSED), chosen)?;
            write_text(&self.path(SELECT_REPORT), &report)
        })
    }

    fn split_outputs(&self) -> Vec<String> {
        self.datasets()
            .iter()
            .flat_map(|d| SPLIT_PARTS.iter().map(move |p| split_file(d, p)))
            .collect()
    }

    pub fn split(&self) -> Result<Outcome> {
        let mut inputs = vec![Input::artifact(DIALOGS, "curate"), Input::artifact(OSED, "select-top")];
        if let Some(ed) = &self.cfg.paths.ed {
            inputs.push(Input::external("ed", ed));
        }
        let outputs = self.split_outputs();
        let out_refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
        self.ws.run_stage("split", &inputs, json!({ "datasets": self.datasets() }), self.cfg.seed, &out_refs, || {
            for name in self.datasets() {
                let dialogs: Vec<Dialog> = match name {
                    "OS" => read_jsonl(&self.path(DIALOGS))?,
                    "OSED" => read_jsonl(&self.path(OSED))?,
                    _ => read_jsonl(self.cfg.paths.ed.as_ref().unwrap())?,
                };
                let s = split_dataset(dialogs, self.cfg.seed);
                for (part, items) in SPLIT_PARTS.iter().zip([&s.train, &s.valid, &s.test]) {
                    write_jsonl(&self.path(&split_file(name, part)), items)?;
                }
            }
            Ok(())
        })
    }

    fn train_dataset(&self) -> Result<&str> {
        let name = self.cfg.train.dataset.as_str();
        if !self.datasets().contains(&name) {
            return Err(Error::Config(format!(
                "train.dataset = {name:?} is not available; choose one of {:?}",
                self.datasets()
            )));
        }
        Ok(name)
    }

    pub fn train_tokenizer(&self) -> Result<Outcome> {
        let ds = self.train_dataset()?;
        let train = split_file(ds, "train");
        let inputs = [Input::artifact(train.clone(), "split")];
        self.ws.run_stage("train-tokenizer", &inputs, to_value(&self.cfg.tokenizer), self.cfg.seed, &[TOKENIZER], || {
            let dialogs: Vec<Dialog> = read_jsonl(&self.path(&train))?;
            let tok = BpeTokenizer::train(dialogs.iter().flat_map(|d| d.texts()), self.cfg.tokenizer.vocab_size);
            tok.save(&self.path(TOKENIZER))?;
            Ok(())
        })
    }

    fn model_inputs(&self, ds: &str) -> Vec<Input> {
        let mut v = vec![
            Input::artifact(split_file(ds, "train"), "split"),
            Input::artifact(split_file(ds, "valid"), "split"),
            Input::artifact(TOKENIZER, "train-tokenizer"),
        ];
        v.extend(self.classifier_inputs());
        v
    }

    /// Encoded training and validation examples, plus what the model needs.
    fn training_data(&self, ds: &str, max_input: usize, max_target: usize) -> Result<(BpeTokenizer, Vec<EncodedExample>, Vec<EncodedExample>)> {
        let tok = BpeTokenizer::load(&self.path(TOKENIZER))?;
        let classifier = self.load_classifier()?;
        let probe = self.cfg.model.model_config(tok.vocab_size(), self.labels.len(), self.cfg.seed);
        let probe = empdial_model::ModelConfig {
            max_input_tokens: max_input,
            max_target_tokens: max_target,
            ..probe
        };
        let mut sets = Vec::new();
        for part in ["train", "valid"] {
            let dialogs: Vec<Dialog> = read_jsonl(&self.path(&split_file(ds, part)))?;
            let examples = label_examples(&dialogs, &classifier);
            sets.push(encode_examples(&examples, &tok, &classifier, &probe)?);
        }
        let valid = sets.pop().unwrap();
        let train = sets.pop().unwrap();
        Ok((tok, train, valid))
    }

    fn train_params(&self) -> serde_json::Value {
        json!({ "model": self.cfg.model, "train": self.cfg.train })
    }

    fn optimizer(&self) -> empdial_model::TrainConfig {
        empdial_model::TrainConfig {
            seed: self.cfg.seed,
            ..self.cfg.train.optimizer.clone()
        }
    }

    pub fn train_generator(&self) -> Result<Outcome> {
        let ds = self.train_dataset()?;
        let m = &self.cfg.model;
        self.ws.run_stage(
            "train-generator",
            &self.model_inputs(ds),
            self.train_params(),
            self.cfg.seed,
            &[GENERATOR_CKPT, GENERATOR_JSON, GENERATOR_REPORT],
            || {
                let (tok, train, valid) = self.training_data(ds, m.max_input_tokens, m.max_target_tokens)?;
                let config = m.model_config(tok.vocab_size(), self.labels.len(), self.cfg.seed);
                let mut model = Generator::<f32>::new(config, Provenance::of(&tok, &self.labels))?;
                let report = train_generator(&mut model, &train, &valid, &self.optimizer())?;
                model.save(&self.path(MODELS), "generator")?;
                write_json(&self.path(GENERATOR_REPORT), &report)
            },
        )
    }

    pub fn train_predictor(&self) -> Result<Outcome> {
        let ds = self.train_dataset()?;
        let m = &self.cfg.model;
        self.ws.run_stage(
            "train-predictor",
            &self.model_inputs(ds),
            self.train_params(),
            self.cfg.seed,
            &[PREDICTOR_CKPT, PREDICTOR_JSON, PREDICTOR_REPORT],
            || {
                let (tok, train, valid) = self.training_data(ds, m.max_input_tokens, m.max_target_tokens)?;
                let config = m.model_config(tok.vocab_size(), self.labels.len(), self.cfg.seed);
                let mut model = Predictor::<f32>::new(config, Provenance::of(&tok, &self.labels))?;
                let report = train_predictor(&mut model, &train, &valid, &self.optimizer())?;
                model.save(&self.path(MODELS), "predictor")?;
                write_json(&self.path(PREDICTOR_REPORT), &report)
            },
        )
    }

    fn model_dir(&self, entry: &ModelEntry) -> PathBuf {
        self.ws.root.join(&entry.dir)
    }

    /// Bundle files of a model: stage artifacts for the in-pipeline model,
    /// user inputs for any other directory.
    fn bundle_inputs(&self, entry: &ModelEntry) -> Vec<Input> {
        if entry.dir == Path::new(MODELS) {
            let mut v = self.classifier_inputs();
            v.push(Input::artifact(TOKENIZER, "train-tokenizer"));
            for (rel, stage) in [
                (GENERATOR_CKPT, "train-generator"),
                (GENERATOR_JSON, "train-generator"),
                (PREDICTOR_CKPT, "train-predictor"),
                (PREDICTOR_JSON, "train-predictor"),
            ] {
                v.push(Input::artifact(rel, stage));
            }
            v
        } else {
            vec![Input::external(format!("model:{}", entry.name), self.model_dir(entry))]
        }
    }

    pub fn eval_datasets(&self) -> Result<Vec<String>> {
        let available = self.datasets();
        if self.cfg.evaluate.datasets.is_empty() {
            return Ok(available.iter().map(|s| s.to_string()).collect());
        }
        for d in &self.cfg.evaluate.datasets {
            if !available.contains(&d.as_str()) {
                return Err(Error::Config(format!("evaluate.datasets names unknown dataset {d:?}")));
            }
        }
        Ok(self.cfg.evaluate.datasets.clone())
    }

    fn evaluate_outputs(&self, datasets: &[String]) -> Vec<String> {
        let mut v: Vec<String> = [METRICS_TSV, METRICS_TXT, PRF_TXT, COMBINED].iter().map(|s| s.to_string()).collect();
        for m in &self.cfg.evaluate.models {
            for d in datasets {
                v.push(responses_file(&m.name, d));
            }
        }
        v
    }

    pub fn evaluate(&self) -> Result<Outcome> {
        let datasets = self.eval_datasets()?;
        let mut inputs: Vec<Input> = datasets.iter().map(|d| Input::artifact(split_file(d, "test"), "split")).collect();
        for m in &self.cfg.evaluate.models {
            inputs.extend(self.bundle_inputs(m));
        }
        let outputs = self.evaluate_outputs(&datasets);
        let out_refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
        let params = json!({ "evaluate": self.cfg.evaluate, "generation": self.cfg.generation, "datasets": datasets });
        self.ws.run_stage("evaluate", &inputs, params, self.cfg.seed, &out_refs, || self.evaluate_body(&datasets))
    }

    fn evaluate_body(&self, datasets: &[String]) -> Result<()> {
        let mut tests: Vec<(String, Vec<Dialog>)> = Vec::new();
        for d in datasets {
            let dialogs: Vec<Dialog> = read_jsonl(&self.path(&split_file(d, "test")))?;
            // a dialog needs a context and a response to be rated
            tests.push((d.clone(), dialogs.into_iter().filter(|x| x.turns.len() >= 2).collect()));
        }
        let mut report = MetricsReport::default();
        let mut prf_rows = String::from("# model & P/R/F-1 per dataset\n# datasets:");
        for (d, _) in &tests {
            prf_rows.push(' ');
            prf_rows.push_str(d);
        }
        prf_rows.push('\n');
        let mut bundles = Vec::new();
        for entry in &self.cfg.evaluate.models {
            let bundle = ModelBundle::load(&self.model_dir(entry), self.labels.clone(), self.cfg.generation.clone())?;
            let mut prfs: Vec<PrfReport> = Vec::new();
            for (name, dialogs) in &tests {
                let (cell, prf, records) = self.score_dataset(&bundle, name, dialogs)?;
                report.insert(&entry.name, name, cell);
                prfs.push(prf);
                write_jsonl(&self.path(&responses_file(&entry.name, name)), &records)?;
            }
            let _ = writeln!(prf_rows, "{}", format_prf_row(&entry.name, &prfs));
            bundles.push((entry.name.clone(), bundle));
        }
        write_text(&self.path(METRICS_TSV), &report.to_tsv())?;
        write_text(&self.path(METRICS_TXT), &report.to_text())?;
        write_text(&self.path(PRF_TXT), &prf_rows)?;

        let combined = build_combined_test(&tests, self.cfg.evaluate.per_set, self.cfg.seed)?;
        let mut rated = Vec::with_capacity(combined.len());
        for tagged in &combined {
            let ex = final_turn_example(&tagged.item, |_| 0).expect("dialogs have two turns");
            rated.push(EvalDialog {
                dialog_id: dialog_id(&tagged.source, &tagged.item),
                source: tagged.source.clone(),
                context: ex.context,
                ground_truth: ex.response,
                outputs: BTreeMap::new(),
            });
        }
        for (name, bundle) in &bundles {
            let texts: Vec<String> = rated
                .par_iter()
                .map(|r| Ok(generate(bundle, &r.context, None)?.text))
                .collect::<Result<_>>()?;
            for (r, t) in rated.iter_mut().zip(texts) {
                r.outputs.insert(name.clone(), t);
            }
        }
        Ok(write_jsonl(&self.path(COMBINED), &rated)?)
    }

    fn score_dataset(&self, bundle: &ModelBundle, name: &str, dialogs: &[Dialog]) -> Result<(MetricsCell, PrfReport, Vec<ResponseRecord>)> {
        let classifier = &*bundle.classifier;
        let examples: Vec<TrainingExample> = dialogs
            .par_iter()
            .flat_map_iter(|d| examples_from_dialog(d, |t| classifier.distribution(t).argmax()))
            .collect();
        let gen_encoded = encode_examples(&examples, &bundle.tokenizer, classifier, &bundle.generator.config)?;
        let ppl = perplexity(&GeneratorScorer(&bundle.generator), &gen_encoded)?;
        let pred_encoded = encode_examples(&examples, &bundle.tokenizer, classifier, &bundle.predictor.config)?;
        let predicted: Vec<usize> = pred_encoded
            .par_iter()
            .map(|ex| Ok(bundle.predictor.distribution(&ex.input)?.argmax()))
            .collect::<Result<_>>()?;
        let gold: Vec<usize> = pred_encoded.iter().map(|e| e.label).collect();
        let prf = weighted_prf(&predicted, &gold, &self.labels)?;

        let cap = match self.cfg.evaluate.max_generate {
            0 => dialogs.len(),
            n => n.min(dialogs.len()),
        };
        let records: Vec<ResponseRecord> = dialogs[..cap]
            .par_iter()
            .map(|d| {
                let ex = final_turn_example(d, |_| 0).expect("dialogs have two turns");
                let r = generate(bundle, &ex.context, None)?;
                Ok(ResponseRecord {
                    dialog_id: dialog_id(name, d),
                    context: ex.context,
                    reference: ex.response,
                    response: r.text,
                    label: r.label,
                    predicted: r.predicted,
                })
            })
            .collect::<Result<_>>()?;
        let responses: Vec<&str> = records.iter().map(|r| r.response.as_str()).collect();
        let references: Vec<&str> = records.iter().map(|r| r.reference.as_str()).collect();
        let embedder = SubwordMeanEmbedder::new(bundle.tokenizer.clone(), &bundle.generator);
        let similarity = if records.is_empty() {
            0.0
        } else {
            corpus_similarity(&embedder, &responses, &references)?
        };
        let cell = MetricsCell {
            perplexity: ppl,
            distinct1: distinct_n(&responses, 1).value,
            distinct2: distinct_n(&responses, 2).value,
            similarity,
        };
        Ok((cell, prf, records))
    }

    pub fn build_hits(&self) -> Result<Outcome> {
        let inputs = [Input::artifact(COMBINED, "evaluate")];
        let models: Vec<String> = self.cfg.evaluate.models.iter().map(|m| m.name.clone()).collect();
        let params = json!({ "rating": self.cfg.rating, "models": models });
        self.ws.run_stage("build-hits", &inputs, params, self.cfg.seed, &[HITS], || {
            let dialogs: Vec<EvalDialog> = read_jsonl(&self.path(COMBINED))?;
            let hits = build_hits(&dialogs, &models, &self.cfg.rating, self.cfg.seed)?;
            write_hits(&self.path(HITS), &hits)?;
            Ok(())
        })
    }

    /// The HIT file, verified against its manifest.
    pub fn verified_hits(&self) -> Result<Vec<empdial_eval::Hit>> {
        let m = self
            .ws
            .manifest("build-hits")?
            .ok_or(Error::MissingArtifact {
                path: self.path(HITS),
                stage: "build-hits",
            })?;
        let expected = m.outputs.get(HITS).cloned().unwrap_or_default();
        let actual = crate::manifest::hash_path(&self.path(HITS)).map_err(|_| Error::MissingArtifact {
            path: self.path(HITS),
            stage: "build-hits",
        })?;
        if actual != expected {
            return Err(Error::HashMismatch {
                path: self.path(HITS),
                expected,
                actual,
            });
        }
        Ok(empdial_eval::hits::read_hits(&self.path(HITS))?)
    }
}

/// Loads a bundle for ad-hoc generation.
pub fn load_bundle(dir: &Path, labels: LabelSet, generation: empdial_model::GenerationConfig) -> Result<ModelBundle> {
    Ok(ModelBundle::load(dir, labels, generation)?)
}

/// One context per line: a JSON array of utterances or an object with a
/// `context` array.
pub fn read_contexts(path: &Path) -> Result<Vec<Vec<String>>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Line {
        List(Vec<String>),
        Object { context: Vec<String> },
    }
    let lines: Vec<Line> = read_jsonl(path)?;
    Ok(lines
        .into_iter()
        .map(|l| match l {
            Line::List(v) | Line::Object { context: v } => v,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub context: Vec<String>,
    /// Predictor's label for the response.
    pub predicted: String,
    /// Label the decoder was conditioned on.
    pub label: String,
    pub response: String,
    pub truncated: bool,
}

pub fn respond(bundle: &ModelBundle, contexts: &[Vec<String>], emotion: Option<&str>) -> Result<Vec<Reply>> {
    let override_label = emotion
        .map(|e| {
            bundle
                .labels
                .index(e)
                .ok_or_else(|| Error::Config(format!("unknown emotion label {e:?}")))
        })
        .transpose()?;
    contexts
        .par_iter()
        .map(|c| {
            let r = generate(bundle, c, override_label)?;
            Ok(Reply {
                context: c.clone(),
                predicted: r.predicted,
                label: r.label,
                response: r.text,
                truncated: r.truncated,
            })
        })
        .collect()
}

/// Utterance emotionality of a text under a classifier; used by reports.
pub fn utterance_emotionality(classifier: &dyn UtteranceClassifier, labels: &LabelSet, text: &str) -> f64 {
    emotionality(&classifier.distribution(text), labels)
}
