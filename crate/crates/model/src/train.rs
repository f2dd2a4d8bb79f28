//! Mini-batch Adam training shared by the generator and the predictor.
//!
//! Per-example graphs run in parallel; their gradients are summed in
//! example order, so a run is bit-reproducible for a given seed regardless
//! of thread count.

use empdial_core::classifier::UtteranceClassifier;
use empdial_core::records::TrainingExample;
use empdial_core::tokenizer::{BpeTokenizer, BOS, EOS};
use empdial_tensor::{AdamConfig, AdamState, Gradients, Graph, ParamStore, Scalar, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::generator::Generator;
use crate::input::{build_input, InputEncoding};
use crate::predictor::Predictor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub input: InputEncoding,
    /// Response token ids without BOS or EOS.
    pub response: Vec<usize>,
    pub label: usize,
}

impl EncodedExample {
    /// Teacher-forcing pair: `[BOS, y..]` in, `[y.., EOS]` out.
    pub fn decoder_io(&self) -> (Vec<usize>, Vec<usize>) {
        let mut inputs = Vec::with_capacity(self.response.len() + 1);
        inputs.push(BOS as usize);
        inputs.extend_from_slice(&self.response);
        let mut targets = self.response.clone();
        targets.push(EOS as usize);
        (inputs, targets)
    }

    pub fn target_len(&self) -> usize {
        self.response.len() + 1
    }
}

/// Context labels come from the utterance classifier's argmax; the response
/// label is the example's own `e_y`.
pub fn encode_example<C: UtteranceClassifier + ?Sized>(
    example: &TrainingExample,
    tokenizer: &BpeTokenizer,
    classifier: &C,
    config: &ModelConfig,
) -> Result<EncodedExample> {
    let utterances: Vec<Vec<u32>> = example.context.iter().map(|u| tokenizer.encode(u)).collect();
    let labels: Vec<usize> = example.context.iter().map(|u| classifier.distribution(u).argmax()).collect();
    let input = build_input(&utterances, &labels, config.max_input_tokens)?;
    let mut response: Vec<usize> = tokenizer.encode(&example.response).into_iter().map(|t| t as usize).collect();
    response.truncate(config.max_target_tokens - 1);
    if example.e_y >= config.num_labels {
        return Err(Error::Config(format!("label {} outside 0..{}", example.e_y, config.num_labels)));
    }
    Ok(EncodedExample {
        input,
        response,
        label: example.e_y,
    })
}

pub fn encode_examples<C: UtteranceClassifier + Sync + ?Sized>(
    examples: &[TrainingExample],
    tokenizer: &BpeTokenizer,
    classifier: &C,
    config: &ModelConfig,
) -> Result<Vec<EncodedExample>> {
    examples
        .par_iter()
        .map(|ex| encode_example(ex, tokenizer, classifier, config))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 32,
            max_epochs: 100,
            patience: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_loss: f64,
    pub steps: u64,
}

fn mix(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    }
    h
}

/// Adam needs a gradient buffer on every parameter, including ones a batch
/// never touches.
fn ensure_grads<T: Scalar>(store: &mut ParamStore<T>) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).accumulate_grad(&[]);
    }
}

type Weight = fn(&EncodedExample) -> usize;

/// Weighted mean loss over `data` in evaluation mode.
fn evaluate<T, F>(store: &ParamStore<T>, data: &[EncodedExample], weight: Weight, loss: &F) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<'_, T>, &EncodedExample) -> Result<Var> + Sync,
{
    let parts: Vec<(f64, usize)> = data
        .par_iter()
        .map(|ex| {
            let mut g = Graph::new(store);
            let l = loss(&mut g, ex)?;
            let w = weight(ex);
            Ok((g.value(l).data()[0].f64() * w as f64, w))
        })
        .collect::<Result<_>>()?;
    let total: usize = parts.iter().map(|p| p.1).sum();
    Ok(parts.iter().map(|p| p.0).sum::<f64>() / total.max(1) as f64)
}

fn fit<T, F>(
    store: &mut ParamStore<T>,
    train: &[EncodedExample],
    valid: &[EncodedExample],
    cfg: &TrainConfig,
    weight: Weight,
    loss: F,
) -> Result<TrainReport>
where
    T: Scalar,
    F: Fn(&mut Graph<'_, T>, &EncodedExample) -> Result<Var> + Sync,
{
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    ensure_grads(store);
    store.zero_grad();
    let mut adam = AdamState::new(
        store,
        AdamConfig {
            lr: cfg.learning_rate,
            ..Default::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_loss: f64::INFINITY,
        steps: 0,
    };
    let mut best: Option<ParamStore<T>> = None;
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut weight_sum) = (0.0, 0usize);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_weight: usize = batch.iter().map(|&i| weight(&train[i])).sum();
            let frozen: &ParamStore<T> = store;
            let results: Vec<(f64, Gradients<T>)> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let seed = mix(&[cfg.seed, epoch as u64, step as u64, k as u64]);
                    let mut g = Graph::training(frozen, seed);
                    let l = loss(&mut g, &train[i])?;
                    let w = weight(&train[i]);
                    let scaled = g.scale(l, T::of(w as f64 / batch_weight as f64));
                    let grads = g.backward(scaled)?;
                    Ok((g.value(l).data()[0].f64() * w as f64, grads))
                })
                .collect::<Result<_>>()?;
            for (l, grads) in &results {
                store.accumulate(grads);
                loss_sum += l;
            }
            weight_sum += batch_weight;
            adam.step(store)?;
            report.steps += 1;
        }
        let train_loss = loss_sum / weight_sum as f64;
        let valid_loss = if valid.is_empty() {
            None
        } else {
            Some(evaluate(store, valid, weight, &loss)?)
        };
        let monitored = valid_loss.unwrap_or(train_loss);
        log::info!("epoch {epoch}: train {train_loss:.4} valid {valid_loss:?}");
        report.epochs.push(EpochStats {
            epoch,
            train_loss,
            valid_loss,
        });
        if monitored < report.best_loss {
            report.best_loss = monitored;
            report.best_epoch = epoch;
            best = Some(store.clone());
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some(b) = best {
        store.copy_values_from(&b)?;
    }
    store.clear_grads();
    Ok(report)
}

fn tokens(ex: &EncodedExample) -> usize {
    ex.target_len()
}

fn one(_: &EncodedExample) -> usize {
    1
}

/// Teacher-forced training; the loss is the mean over all target tokens of a batch.
pub fn train_generator<T: Scalar>(
    model: &mut Generator<T>,
    train: &[EncodedExample],
    valid: &[EncodedExample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut store = std::mem::take(&mut model.store);
    let shell: &Generator<T> = model;
    let out = fit(&mut store, train, valid, cfg, tokens, |g, ex| shell.loss(g, ex));
    model.store = store;
    out
}

pub fn train_predictor<T: Scalar>(
    model: &mut Predictor<T>,
    train: &[EncodedExample],
    valid: &[EncodedExample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut store = std::mem::take(&mut model.store);
    let shell: &Predictor<T> = model;
    let out = fit(&mut store, train, valid, cfg, one, |g, ex| shell.loss(g, ex));
    model.store = store;
    out
}

/// Token-weighted mean cross-entropy; its exponential is the perplexity.
pub fn generator_loss<T: Scalar>(model: &Generator<T>, data: &[EncodedExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    evaluate(&model.store, data, tokens, &|g: &mut Graph<'_, T>, ex: &EncodedExample| model.loss(g, ex))
}

pub fn predictor_accuracy<T: Scalar>(model: &Predictor<T>, data: &[EncodedExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = data
        .par_iter()
        .map(|ex| Ok(usize::from(model.distribution(&ex.input)?.argmax() == ex.label)))
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}
