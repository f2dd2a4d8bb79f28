//! Response-label predictor: its own embeddings and encoder, attention
//! pooling with a learned query vector, then a one-hidden-layer classifier.

use std::path::Path;

use empdial_core::EmotionDistribution;
use empdial_tensor::{init, Graph, ParamId, ParamStore, Scalar, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::{load_checkpoint, read_manifest, save_checkpoint, Provenance};
use crate::config::ModelConfig;
use crate::input::InputEncoding;
use crate::layers::{Embeddings, Encoder, Linear};
use crate::train::EncodedExample;
use crate::{Error, Result};

pub const KIND: &str = "predictor";

#[derive(Clone, Debug)]
pub struct PredictorLayout {
    pub embeddings: Embeddings,
    pub encoder: Encoder,
    /// `[d_model, 1]` scoring vector for the pooling weights.
    pub pool: ParamId,
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Clone, Debug)]
pub struct Predictor<T: Scalar = f32> {
    pub config: ModelConfig,
    pub provenance: Provenance,
    pub store: ParamStore<T>,
    pub layout: PredictorLayout,
}

/// Softmax-weighted average of the rows of `reps` `[N, d]`, weights taken
/// from the scores `reps · v`. Returns `(weights [1, N], pooled [1, d])`.
pub fn attention_pool<T: Scalar>(g: &mut Graph<'_, T>, reps: Var, v: Var) -> Result<(Var, Var)> {
    let scores = g.matmul(reps, v)?;
    let scores = g.transpose(scores)?;
    let weights = g.softmax(scores);
    let pooled = g.matmul(weights, reps)?;
    Ok((weights, pooled))
}

impl<T: Scalar> Predictor<T> {
    pub fn new(config: ModelConfig, provenance: Provenance) -> Result<Self> {
        config.validate()?;
        // distinct stream from a generator built with the same seed
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5052_4544);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let embeddings = Embeddings::register(&mut store, "embed", &config, &mut rng)?;
        let encoder = Encoder::register(&mut store, "enc", &config, &mut rng)?;
        let pool = store.add("pool.v", init::normal(&[d, 1], 1.0 / (d as f64).sqrt(), &mut rng))?;
        let hidden = Linear::register(&mut store, "head.hidden", d, d, &mut rng)?;
        let output = Linear::register(&mut store, "head.out", d, config.num_labels, &mut rng)?;
        Ok(Self {
            config,
            provenance,
            store,
            layout: PredictorLayout {
                embeddings,
                encoder,
                pool,
                hidden,
                output,
            },
        })
    }

    pub fn cast<U: Scalar>(&self) -> Predictor<U> {
        Predictor {
            config: self.config.clone(),
            provenance: self.provenance.clone(),
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Label logits `[1, num_labels]`.
    pub fn logits(&self, g: &mut Graph<'_, T>, input: &InputEncoding) -> Result<Var> {
        if input.len() > self.config.max_input_tokens {
            return Err(Error::Config(format!(
                "input of {} tokens exceeds max_input_tokens {}",
                input.len(),
                self.config.max_input_tokens
            )));
        }
        let x = self.layout.embeddings.embed_input(g, input)?;
        let reps = self.layout.encoder.forward(g, x, self.config.dropout)?.output;
        let v = g.param(self.layout.pool);
        let (_, pooled) = attention_pool(g, reps, v)?;
        let h = self.layout.hidden.forward(g, pooled)?;
        let h = g.gelu(h);
        let h = g.dropout(h, self.config.dropout);
        self.layout.output.forward(g, h)
    }

    pub fn loss(&self, g: &mut Graph<'_, T>, example: &EncodedExample) -> Result<Var> {
        let logits = self.logits(g, &example.input)?;
        Ok(g.cross_entropy(logits, &[example.label])?)
    }

    pub fn distribution(&self, input: &InputEncoding) -> Result<EmotionDistribution> {
        let mut g = Graph::new(&self.store);
        let logits = self.logits(&mut g, input)?;
        Ok(EmotionDistribution::from_logits(&g.value(logits).to_f64_vec()))
    }
}

impl Predictor<f32> {
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        save_checkpoint(dir, stem, KIND, &self.config, &self.provenance, &self.store)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (config, provenance) = read_manifest(dir, stem, KIND)?;
        let mut model = Self::new(config, provenance)?;
        load_checkpoint(dir, stem, &mut model.store)?;
        Ok(model)
    }
}
