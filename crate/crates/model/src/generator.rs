//! Encoder-decoder response generator conditioned on a response label.

use std::path::Path;

use empdial_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::{load_checkpoint, save_checkpoint, Provenance};
use crate::config::ModelConfig;
use crate::input::InputEncoding;
use crate::layers::{DecoderLayer, Embeddings, Encoded, Encoder, LayerNorm};
use crate::train::EncodedExample;
use crate::{Error, Result};

pub const KIND: &str = "generator";

#[derive(Clone, Debug)]
pub struct GeneratorLayout {
    /// Shared by the encoder input, the decoder input and the output layer.
    pub embeddings: Embeddings,
    pub encoder: Encoder,
    pub decoder: Vec<DecoderLayer>,
    pub decoder_norm: LayerNorm,
    pub output_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct Generator<T: Scalar = f32> {
    pub config: ModelConfig,
    pub provenance: Provenance,
    pub store: ParamStore<T>,
    pub layout: GeneratorLayout,
}

impl<T: Scalar> Generator<T> {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig, provenance: Provenance) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let embeddings = Embeddings::register(&mut store, "embed", &config, &mut rng)?;
        let encoder = Encoder::register(&mut store, "enc", &config, &mut rng)?;
        let decoder = (0..config.num_layers)
            .map(|i| DecoderLayer::register(&mut store, &format!("dec.{i}"), &config, &mut rng))
            .collect::<Result<_>>()?;
        let decoder_norm = LayerNorm::register(&mut store, "dec.norm", config.d_model)?;
        let output_bias = store.add("out.bias", Tensor::zeros(&[config.vocab_size]))?;
        Ok(Self {
            config,
            provenance,
            store,
            layout: GeneratorLayout {
                embeddings,
                encoder,
                decoder,
                decoder_norm,
                output_bias,
            },
        })
    }

    /// Same layout and values in another precision.
    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            config: self.config.clone(),
            provenance: self.provenance.clone(),
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn encode(&self, g: &mut Graph<'_, T>, input: &InputEncoding) -> Result<Encoded> {
        self.check_input(input)?;
        let x = self.layout.embeddings.embed_input(g, input)?;
        self.layout.encoder.forward(g, x, self.config.dropout)
    }

    /// Next-token logits `[prefix.len(), vocab]` for a decoder prefix that
    /// starts with BOS.
    pub fn decode_logits(
        &self,
        g: &mut Graph<'_, T>,
        memory: Var,
        prefix: &[usize],
        label: usize,
        responder_segment: usize,
    ) -> Result<Var> {
        let n = prefix.len();
        if n == 0 || n > self.config.max_target_tokens {
            return Err(Error::Config(format!(
                "decoder prefix length {n} outside 1..={}",
                self.config.max_target_tokens
            )));
        }
        let positions: Vec<usize> = (0..n).collect();
        let x = self.layout.embeddings.forward(g, prefix, &positions, &vec![label; n], &vec![responder_segment; n])?;
        let mut x = g.dropout(x, self.config.dropout);
        for layer in &self.layout.decoder {
            x = layer.forward(g, x, memory, self.config.dropout)?;
        }
        let h = self.layout.decoder_norm.forward(g, x)?;
        let table = g.param(self.layout.embeddings.word);
        let logits = g.matmul_bt(h, table)?;
        let bias = g.param(self.layout.output_bias);
        Ok(g.add_row(logits, bias)?)
    }

    /// Teacher-forced mean cross-entropy over the response tokens and EOS.
    pub fn loss(&self, g: &mut Graph<'_, T>, example: &EncodedExample) -> Result<Var> {
        let memory = self.encode(g, &example.input)?.output;
        let (inputs, targets) = example.decoder_io();
        let logits = self.decode_logits(g, memory, &inputs, example.label, example.input.responder_segment)?;
        Ok(g.cross_entropy(logits, &targets)?)
    }

    /// Eval-mode encoder output as a plain tensor, reused across decoding steps.
    pub fn memory(&self, input: &InputEncoding) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.store);
        let out = self.encode(&mut g, input)?.output;
        Ok(g.value(out).clone())
    }

    fn check_input(&self, input: &InputEncoding) -> Result<()> {
        if input.len() > self.config.max_input_tokens {
            return Err(Error::Config(format!(
                "input of {} tokens exceeds max_input_tokens {}",
                input.len(),
                self.config.max_input_tokens
            )));
        }
        Ok(())
    }
}

impl Generator<f32> {
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        save_checkpoint(dir, stem, KIND, &self.config, &self.provenance, &self.store)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (config, provenance) = crate::bundle::read_manifest(dir, stem, KIND)?;
        let mut model = Self::new(config, provenance)?;
        load_checkpoint(dir, stem, &mut model.store)?;
        Ok(model)
    }
}
