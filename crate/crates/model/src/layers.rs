//! Pre-norm transformer blocks built on the autodiff graph.

use empdial_tensor::{init, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::input::InputEncoding;
use crate::Result;

fn add<T: Scalar>(store: &mut ParamStore<T>, name: String, t: Tensor<T>) -> Result<ParamId> {
    Ok(store.add(name, t)?)
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: add(store, format!("{prefix}.w"), init::xavier(fan_in, fan_out, rng))?,
            b: add(store, format!("{prefix}.b"), Tensor::zeros(&[fan_out]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matmul(x, w)?;
        Ok(g.add_row(y, b)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: add(store, format!("{prefix}.gamma"), Tensor::full(&[dim], T::one()))?,
            beta: add(store, format!("{prefix}.beta"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (a, b) = (g.param(self.gamma), g.param(self.beta));
        Ok(g.layer_norm(x, a, b)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn register<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            q: Linear::register(store, &format!("{prefix}.q"), d, d, rng)?,
            k: Linear::register(store, &format!("{prefix}.k"), d, d, rng)?,
            v: Linear::register(store, &format!("{prefix}.v"), d, d, rng)?,
            out: Linear::register(store, &format!("{prefix}.out"), d, d, rng)?,
            heads: cfg.num_heads,
        })
    }

    /// Multi-head scaled dot-product attention of `query` rows over `memory`
    /// rows. Returns the output and each head's attention weights.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        query: Var,
        memory: Var,
        causal: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let q = self.q.forward(g, query)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let d = g.shape(q)[1];
        let dh = d / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.col_slice(q, h * dh, dh)?;
            let kh = g.col_slice(k, h * dh, dh)?;
            let vh = g.col_slice(v, h * dh, dh)?;
            let scores = g.matmul_bt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let a = if causal { g.causal_softmax(scores)? } else { g.softmax(scores) };
            weights.push(a);
            outs.push(g.matmul(a, vh)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        Ok((self.out.forward(g, joined)?, weights))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn register<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            up: Linear::register(store, &format!("{prefix}.up"), cfg.d_model, cfg.d_ff, rng)?,
            down: Linear::register(store, &format!("{prefix}.down"), cfg.d_ff, cfg.d_model, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

fn residual<T: Scalar>(g: &mut Graph<'_, T>, x: Var, delta: Var, dropout: f64) -> Result<Var> {
    let delta = g.dropout(delta, dropout);
    Ok(g.add(x, delta)?)
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: Attention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderLayer {
    pub fn register<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            norm_attn: LayerNorm::register(store, &format!("{prefix}.norm_attn"), cfg.d_model)?,
            attn: Attention::register(store, &format!("{prefix}.attn"), cfg, rng)?,
            norm_ff: LayerNorm::register(store, &format!("{prefix}.norm_ff"), cfg.d_model)?,
            ff: FeedForward::register(store, &format!("{prefix}.ff"), cfg, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, dropout: f64) -> Result<(Var, Vec<Var>)> {
        let h = self.norm_attn.forward(g, x)?;
        let (a, w) = self.attn.forward(g, h, h, false)?;
        let x = residual(g, x, a, dropout)?;
        let h = self.norm_ff.forward(g, x)?;
        let f = self.ff.forward(g, h)?;
        Ok((residual(g, x, f, dropout)?, w))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayer {
    pub norm_self: LayerNorm,
    pub self_attn: Attention,
    pub norm_cross: LayerNorm,
    pub cross_attn: Attention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl DecoderLayer {
    pub fn register<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            norm_self: LayerNorm::register(store, &format!("{prefix}.norm_self"), cfg.d_model)?,
            self_attn: Attention::register(store, &format!("{prefix}.self_attn"), cfg, rng)?,
            norm_cross: LayerNorm::register(store, &format!("{prefix}.norm_cross"), cfg.d_model)?,
            cross_attn: Attention::register(store, &format!("{prefix}.cross_attn"), cfg, rng)?,
            norm_ff: LayerNorm::register(store, &format!("{prefix}.norm_ff"), cfg.d_model)?,
            ff: FeedForward::register(store, &format!("{prefix}.ff"), cfg, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, memory: Var, dropout: f64) -> Result<Var> {
        let h = self.norm_self.forward(g, x)?;
        let (a, _) = self.self_attn.forward(g, h, h, true)?;
        let x = residual(g, x, a, dropout)?;
        let h = self.norm_cross.forward(g, x)?;
        let (c, _) = self.cross_attn.forward(g, h, memory, false)?;
        let x = residual(g, x, c, dropout)?;
        let h = self.norm_ff.forward(g, x)?;
        let f = self.ff.forward(g, h)?;
        residual(g, x, f, dropout)
    }
}

/// Word, position, emotion and segment tables; the embedding of a token is
/// the sum of its four rows.
#[derive(Clone, Copy, Debug)]
pub struct Embeddings {
    pub word: ParamId,
    pub position: ParamId,
    pub emotion: ParamId,
    pub segment: ParamId,
}

impl Embeddings {
    pub fn register<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.d_model;
        let std = 1.0 / (d as f64).sqrt();
        Ok(Self {
            word: add(store, format!("{prefix}.word"), init::normal(&[cfg.vocab_size, d], std, rng))?,
            position: add(store, format!("{prefix}.position"), init::normal(&[cfg.max_positions(), d], std, rng))?,
            emotion: add(store, format!("{prefix}.emotion"), init::normal(&[cfg.num_labels, d], std, rng))?,
            segment: add(store, format!("{prefix}.segment"), init::normal(&[2, d], std, rng))?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        tokens: &[usize],
        positions: &[usize],
        emotions: &[usize],
        segments: &[usize],
    ) -> Result<Var> {
        let mut acc = None;
        for (table, ids) in [
            (self.word, tokens),
            (self.position, positions),
            (self.emotion, emotions),
            (self.segment, segments),
        ] {
            let t = g.param(table);
            let rows = g.embedding(t, ids)?;
            acc = Some(match acc {
                None => rows,
                Some(a) => g.add(a, rows)?,
            });
        }
        Ok(acc.expect("four tables"))
    }

    pub fn embed_input<T: Scalar>(&self, g: &mut Graph<'_, T>, enc: &InputEncoding) -> Result<Var> {
        self.forward(g, &enc.tokens, &enc.positions, &enc.emotions, &enc.segments)
    }
}

/// Embeddings followed by a stack of encoder layers and a final norm.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

pub struct Encoded {
    pub output: Var,
    /// Per layer, per head.
    pub attention: Vec<Vec<Var>>,
}

impl Encoder {
    pub fn register<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let layers = (0..cfg.num_layers)
            .map(|i| EncoderLayer::register(store, &format!("{prefix}.{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            norm: LayerNorm::register(store, &format!("{prefix}.norm"), cfg.d_model)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, dropout: f64) -> Result<Encoded> {
        let mut x = g.dropout(x, dropout);
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, w) = layer.forward(g, x, dropout)?;
            x = y;
            attention.push(w);
        }
        Ok(Encoded {
            output: self.norm.forward(g, x)?,
            attention,
        })
    }
}
