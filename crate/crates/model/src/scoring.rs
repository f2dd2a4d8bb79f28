//! Adapters from the generator to the decoding and evaluation interfaces.

use empdial_core::metrics::{Embedder, SequenceScorer};
use empdial_core::tokenizer::{BpeTokenizer, BOS, PAD};
use empdial_tensor::{log_softmax_row, Graph, Scalar, Tensor};
use rayon::prelude::*;

use crate::decode::StepScorer;
use crate::generator::Generator;
use crate::input::InputEncoding;
use crate::train::EncodedExample;
use crate::Result;

/// Scores next tokens for one context and response label. PAD and BOS are
/// never proposed.
pub struct ResponseScorer<'a, T: Scalar = f32> {
    model: &'a Generator<T>,
    memory: Tensor<T>,
    label: usize,
    segment: usize,
}

impl<'a, T: Scalar> ResponseScorer<'a, T> {
    pub fn new(model: &'a Generator<T>, input: &InputEncoding, label: usize) -> Result<Self> {
        Ok(Self {
            model,
            memory: model.memory(input)?,
            label,
            segment: input.responder_segment,
        })
    }
}

impl<T: Scalar> StepScorer for ResponseScorer<'_, T> {
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.model.store);
        let memory = g.input(self.memory.clone());
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(BOS as usize);
        ids.extend(prefix.iter().map(|&t| t as usize));
        let logits = self.model.decode_logits(&mut g, memory, &ids, self.label, self.segment)?;
        let t = g.value(logits);
        let last = t.row(t.rows() - 1);
        let mut lp: Vec<f64> = log_softmax_row(last).into_iter().map(Scalar::f64).collect();
        for special in [PAD, BOS] {
            if let Some(x) = lp.get_mut(special as usize) {
                *x = f64::NEG_INFINITY;
            }
        }
        Ok(lp)
    }

    fn log_probs_batch(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        prefixes.par_iter().map(|p| self.log_probs(p)).collect()
    }
}

/// Per-token log-probabilities of the gold response, EOS included, under
/// teacher forcing with the gold response label.
pub struct GeneratorScorer<'a, T: Scalar = f32>(pub &'a Generator<T>);

impl<T: Scalar> SequenceScorer<EncodedExample> for GeneratorScorer<'_, T> {
    fn token_log_probs(&self, ex: &EncodedExample) -> empdial_core::Result<Vec<f64>> {
        self.score(ex).map_err(|e| empdial_core::Error::Invalid(e.to_string()))
    }
}

impl<T: Scalar> GeneratorScorer<'_, T> {
    fn score(&self, ex: &EncodedExample) -> Result<Vec<f64>> {
        let model = self.0;
        let mut g = Graph::new(&model.store);
        let memory = model.encode(&mut g, &ex.input)?.output;
        let (inputs, targets) = ex.decoder_io();
        let logits = model.decode_logits(&mut g, memory, &inputs, ex.label, ex.input.responder_segment)?;
        let t = g.value(logits);
        Ok(targets
            .iter()
            .enumerate()
            .map(|(i, &y)| log_softmax_row(t.row(i))[y].f64())
            .collect())
    }
}

/// Sentence vector = mean of the word-embedding rows of its subword tokens.
pub struct SubwordMeanEmbedder {
    tokenizer: BpeTokenizer,
    rows: Vec<Vec<f64>>,
}

impl SubwordMeanEmbedder {
    pub fn new<T: Scalar>(tokenizer: BpeTokenizer, model: &Generator<T>) -> Self {
        let table = model.store.get(model.layout.embeddings.word);
        let rows = (0..table.rows()).map(|r| table.row(r).iter().map(|v| v.f64()).collect()).collect();
        Self { tokenizer, rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

impl Embedder for SubwordMeanEmbedder {
    fn embed(&self, sentence: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let ids: Vec<usize> = self
            .tokenizer
            .encode(sentence)
            .into_iter()
            .map(|t| t as usize)
            .filter(|&t| t < self.rows.len())
            .collect();
        if ids.is_empty() {
            return out;
        }
        for &id in &ids {
            for (o, v) in out.iter_mut().zip(&self.rows[id]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= ids.len() as f64);
        out
    }
}
