use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{matmul_at_into, matmul_bt_into, matmul_into};
use crate::{ParamId, ParamStore, Result, Scalar, Tensor, TensorError};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Dropout(Var, Vec<T>),
    Embedding(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
    ColSlice(Var, usize),
    ConcatCols(Vec<Var>),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

/// A recording of one forward computation over borrowed parameters.
pub struct Graph<'p, T: Scalar> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    train: bool,
    dropout_seed: u64,
    dropout_calls: u64,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// Graph in evaluation mode: dropout is the identity.
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            train: false,
            dropout_seed: 0,
            dropout_calls: 0,
        }
    }

    /// Graph in training mode; dropout masks derive from `seed`.
    pub fn training(store: &'p ParamStore<T>, seed: u64) -> Self {
        let mut g = Self::new(store);
        g.train = true;
        g.dropout_seed = seed;
        g
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// A leaf that is not a parameter; gradients reach it but are not stored.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    /// `a[m,k] · b[n,k]ᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (n, k2) = self.dims2(b);
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(self.mismatch("matmul_bt", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_bt_into(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b)))
    }

    /// Adds a 1-D row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(row).len() != cols || self.shape(x).is_empty() {
            return Err(self.mismatch("add_row", x, row));
        }
        let tx = self.value(x);
        let r = self.value(row).data();
        let data = tx
            .data()
            .chunks(cols)
            .flat_map(|c| c.iter().zip(r).map(|(&a, &b)| a + b))
            .collect();
        let shape = tx.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddRow(x, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x).map(|v| v * c);
        self.push(t, Op::Scale(x, c))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                left: self.shape(x).to_vec(),
                right: vec![],
            });
        }
        let (m, n) = self.dims2(x);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(x)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let cols = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(cols) {
            softmax_row_into(row, &mut out);
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Softmax(x))
    }

    /// Softmax over the last axis with position `j > i` masked out in row `i`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if m != n {
            return Err(TensorError::ShapeMismatch {
                op: "causal_softmax",
                left: self.shape(x).to_vec(),
                right: vec![m, m],
            });
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            softmax_row_into(&row[..=i], &mut out);
            out.extend(std::iter::repeat(T::zero()).take(n - i - 1));
        }
        // Masked entries have zero output, so the unmasked softmax backward
        // formula remains exact for them.
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Softmax(x)))
    }

    /// Layer normalisation over the last axis, followed by `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(gamma).len() != cols {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        if self.value(beta).len() != cols {
            return Err(self.mismatch("layer_norm", x, beta));
        }
        let tx = self.value(x);
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let n = T::of(cols as f64);
        let eps = T::of(LAYER_NORM_EPS);
        let mut xhat = Vec::with_capacity(tx.len());
        let mut rstd = Vec::with_capacity(tx.rows());
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(cols) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * gd[j] + bd[j]);
            }
        }
        let shape = tx.shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu_scalar);
        self.push(t, Op::Gelu(x))
    }

    /// Inverted dropout with a mask drawn from the graph's seed. Identity in
    /// evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            return x;
        }
        let seed = self
            .dropout_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.dropout_calls);
        self.dropout_calls += 1;
        self.dropout_with_seed(x, p, seed)
    }

    /// Inverted dropout with an explicit seed, applied regardless of mode.
    pub fn dropout_with_seed(&mut self, x: Var, p: f64, seed: u64) -> Var {
        if p <= 0.0 {
            return x;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = T::of(1.0 / (1.0 - p));
        let t = self.value(x);
        let mask: Vec<T> = (0..t.len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Dropout(x, mask))
    }

    /// Gathers rows of a `[rows, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "embedding",
                left: t.shape().to_vec(),
                right: vec![],
            });
        }
        let rows = t.rows();
        let dim = t.cols();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange { index: id, rows });
            }
            out.extend_from_slice(t.row(id));
        }
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), dim], out),
            Op::Embedding(table, ids.to_vec()),
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, cols) = (t.rows(), t.cols());
        if rows != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut probs = Vec::with_capacity(t.len());
        let mut total = T::zero();
        for (row, &y) in t.data().chunks(cols).zip(targets) {
            if y >= cols {
                return Err(TensorError::IndexOutOfRange { index: y, rows: cols });
            }
            let start = probs.len();
            softmax_row_into(row, &mut probs);
            let lp = crate::log_softmax_row(row);
            total -= lp[y];
            debug_assert!(probs.len() == start + cols);
        }
        let loss = if rows == 0 { T::zero() } else { total / T::of(rows as f64) };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn col_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if start + len > n {
            return Err(TensorError::ShapeMismatch {
                op: "col_slice",
                left: self.shape(x).to_vec(),
                right: vec![start, len],
            });
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Tensor::from_parts(vec![m, len], out), Op::ColSlice(x, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.dims2(parts[0]).0;
        for &p in parts {
            if self.dims2(p).0 != m {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims2(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, total], out),
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Value::Param(id), Some(g)) = (&node.value, &grads[idx]) {
                params.push((*id, g.clone()));
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = self.value(Var(idx));
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).1;
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                // ga[m,k] += g[m,n] · b[k,n]ᵀ
                matmul_bt_into(g, bd, m, n, k, slot(grads, *a, m * k));
                // gb[k,n] += a[m,k]ᵀ · g[m,n]
                matmul_at_into(ad, g, m, k, n, slot(grads, *b, k * n));
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).0;
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                // ga[m,k] += g[m,n] · b[n,k]
                matmul_into(g, bd, m, n, k, slot(grads, *a, m * k));
                // gb[n,k] += g[m,n]ᵀ · a[m,k]
                matmul_at_into(g, ad, m, n, k, slot(grads, *b, n * k));
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                add_into(slot(grads, *b, g.len()), g);
            }
            Op::AddRow(x, r) => {
                add_into(slot(grads, *x, g.len()), g);
                let cols = self.value(*r).len();
                let gr = slot(grads, *r, cols);
                for chunk in g.chunks(cols) {
                    add_into(gr, chunk);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * bd[i];
                }
                let gb = slot(grads, *b, g.len());
                for i in 0..g.len() {
                    gb[i] += g[i] * ad[i];
                }
            }
            Op::Scale(x, c) => {
                let gx = slot(grads, *x, g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * *c;
                }
            }
            Op::Transpose(x) => {
                let (m, n) = self.dims2(*x);
                let gx = slot(grads, *x, m * n);
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] += g[j * m + i];
                    }
                }
            }
            Op::Softmax(x) => {
                let cols = out.cols();
                let y = out.data();
                let gx = slot(grads, *x, g.len());
                for r in 0..out.rows() {
                    let (ys, gs) = (&y[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                    for j in 0..cols {
                        gx[r * cols + j] += ys[j] * (gs[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = out.cols();
                let rows = out.rows();
                let gd = self.value(*gamma).data();
                {
                    let gb = slot(grads, *beta, cols);
                    for chunk in g.chunks(cols) {
                        add_into(gb, chunk);
                    }
                }
                {
                    let gg = slot(grads, *gamma, cols);
                    for i in 0..g.len() {
                        gg[i % cols] += g[i] * xhat[i];
                    }
                }
                let n = T::of(cols as f64);
                let gx = slot(grads, *x, g.len());
                let mut dxhat = vec![T::zero(); cols];
                for r in 0..rows {
                    let base = r * cols;
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for j in 0..cols {
                        let d = g[base + j] * gd[j];
                        dxhat[j] = d;
                        sum_d += d;
                        sum_dx += d * xhat[base + j];
                    }
                    let scale = rstd[r] / n;
                    for j in 0..cols {
                        gx[base + j] += scale * (n * dxhat[j] - sum_d - xhat[base + j] * sum_dx);
                    }
                }
            }
            Op::Gelu(x) => {
                let xd = self.value(*x).data();
                let gx = slot(grads, *x, g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * gelu_grad(xd[i]);
                }
            }
            Op::Dropout(x, mask) => {
                let gx = slot(grads, *x, g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * mask[i];
                }
            }
            Op::Embedding(table, ids) => {
                let t = self.value(*table);
                let dim = t.cols();
                let gt = slot(grads, *table, t.len());
                for (k, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * dim..(id + 1) * dim], &g[k * dim..(k + 1) * dim]);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let rows = targets.len();
                if rows == 0 {
                    return;
                }
                let cols = probs.len() / rows;
                let scale = g[0] / T::of(rows as f64);
                let gl = slot(grads, *logits, probs.len());
                for (r, &y) in targets.iter().enumerate() {
                    for j in 0..cols {
                        let mut d = probs[r * cols + j];
                        if j == y {
                            d -= T::one();
                        }
                        gl[r * cols + j] += d * scale;
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let gx = slot(grads, *x, n);
                for v in gx.iter_mut() {
                    *v += g[0];
                }
            }
            Op::ColSlice(x, start) => {
                let (m, n) = self.dims2(*x);
                let len = out.cols();
                let gx = slot(grads, *x, m * n);
                for i in 0..m {
                    add_into(
                        &mut gx[i * n + start..i * n + start + len],
                        &g[i * len..(i + 1) * len],
                    );
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let m = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims2(p).1;
                    let gp = slot(grads, p, m * w);
                    for i in 0..m {
                        add_into(
                            &mut gp[i * w..(i + 1) * w],
                            &g[i * total + offset..i * total + offset + w],
                        );
                    }
                    offset += w;
                }
            }
        }
    }
}

/// Result of a backward sweep: per-node gradients plus the parameter subset.
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Vec<T>)>,
}

impl<T> Gradients<T> {
    /// Gradient with respect to any recorded node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], v: Var, len: usize) -> &'a mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_row_into<T: Scalar>(row: &[T], out: &mut Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let start = out.len();
    let mut sum = T::zero();
    for &v in row {
        let e = (v - max).exp();
        sum += e;
        out.push(e);
    }
    for v in &mut out[start..] {
        *v = *v / sum;
    }
}

pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}
