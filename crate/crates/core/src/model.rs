//! Tiny autoregressive language models with exact manual backpropagation.
//!
//! Two architectures share one flat parameter buffer:
//!
//! ```text
//! tabular-bigram   z_i = B[prev(i)]                       B: V×V
//! mlp-pool         c_i = mean(E[x] ∪ E[y_<i])              E: V×d
//!                  z_i = W2 · tanh(W1 · c_i + b1) + b2     W1: h×d, b1: h, W2: V×h, b2: V
//! ```
//!
//! `prev(i)` is `y_{i-1}`, or the last prompt token at `i = 0`. Only response
//! positions produce logits rows, so the prompt must be nonempty.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TokenId;
use crate::error::{Error, Result};
use crate::numerics::{log_softmax_into, SeededRng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    TabularBigram,
    MlpPool,
}

/// Per-position logits over the vocabulary, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> LogitsMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged logits rows".into()));
        }
        let n = rows.len();
        Ok(Self { rows: n, cols, data: rows.into_iter().flatten().collect() })
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values do not fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&self) -> Self {
        let mut out = Self::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            log_softmax_into(self.row(i), out.row_mut(i));
        }
        out
    }

    pub fn scale(&mut self, c: T) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn cast<U: Scalar>(&self) -> LogitsMatrix<U> {
        LogitsMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::c(v.f64())).collect(),
        }
    }
}

/// Model parameters (also used as the gradient container).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    arch: Arch,
    vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    seed: Option<u64>,
    values: Vec<T>,
}

/// Offsets of the named blocks inside the flat buffer.
#[derive(Debug, Clone)]
struct Layout {
    blocks: Vec<(&'static str, Range<usize>)>,
}

impl Layout {
    fn new(arch: Arch, v: usize, d: usize, h: usize) -> Self {
        let sizes: Vec<(&'static str, usize)> = match arch {
            Arch::TabularBigram => vec![("B", v * v)],
            Arch::MlpPool => vec![("E", v * d), ("W1", h * d), ("b1", h), ("W2", v * h), ("b2", v)],
        };
        let mut start = 0;
        let blocks = sizes
            .into_iter()
            .map(|(name, n)| {
                let r = start..start + n;
                start += n;
                (name, r)
            })
            .collect();
        Self { blocks }
    }

    fn total(&self) -> usize {
        self.blocks.last().map_or(0, |(_, r)| r.end)
    }

    fn get(&self, name: &str) -> Range<usize> {
        self.blocks
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, r)| r.clone())
            .expect("block exists for arch")
    }
}

/// Number of scalar parameters for the given architecture and dimensions.
pub fn param_count(arch: Arch, vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> usize {
    Layout::new(arch, vocab_size, embed_dim, hidden_dim).total()
}

impl<T: Scalar> ModelParams<T> {
    fn layout(&self) -> Layout {
        Layout::new(self.arch, self.vocab_size, self.embed_dim, self.hidden_dim)
    }

    fn check_dims(arch: Arch, vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Result<()> {
        if vocab_size < 2 {
            return Err(Error::Config(format!("vocab_size must be >= 2, got {vocab_size}")));
        }
        if arch == Arch::MlpPool && (embed_dim == 0 || hidden_dim == 0) {
            return Err(Error::Config("mlp-pool needs embed_dim and hidden_dim >= 1".into()));
        }
        Ok(())
    }

    pub fn zeros(arch: Arch, vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Result<Self> {
        Self::check_dims(arch, vocab_size, embed_dim, hidden_dim)?;
        let (embed_dim, hidden_dim) = match arch {
            Arch::TabularBigram => (0, 0),
            Arch::MlpPool => (embed_dim, hidden_dim),
        };
        let n = param_count(arch, vocab_size, embed_dim, hidden_dim);
        Ok(Self { arch, vocab_size, embed_dim, hidden_dim, seed: None, values: vec![T::zero(); n] })
    }

    pub fn zeros_like(&self) -> Self {
        Self { values: vec![T::zero(); self.values.len()], seed: None, ..self.clone() }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Named parameter block (`"B"`, or `"E"`, `"W1"`, `"b1"`, `"W2"`, `"b2"`).
    pub fn block(&self, name: &str) -> &[T] {
        &self.values[self.layout().get(name)]
    }

    pub fn block_mut(&mut self, name: &str) -> &mut [T] {
        let r = self.layout().get(name);
        &mut self.values[r]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.vocab_size == other.vocab_size
            && self.embed_dim == other.embed_dim
            && self.hidden_dim == other.hidden_dim
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            seed: self.seed,
            values: self.values.iter().map(|v| U::c(v.f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn add_scaled(&mut self, other: &Self, c: T) {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn l2_norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

/// Draws every parameter i.i.d. uniform in `[-scale, scale]`.
pub fn init_params<T: Scalar>(
    rng: &mut SeededRng,
    arch: Arch,
    vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    scale: f64,
) -> Result<ModelParams<T>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("init scale must be > 0, got {scale}")));
    }
    let mut p = ModelParams::zeros(arch, vocab_size, embed_dim, hidden_dim)?;
    p.seed = Some(rng.seed());
    for v in p.values.iter_mut() {
        *v = T::c(rng.symmetric(scale));
    }
    Ok(p)
}

fn check_tokens(vocab_size: usize, prompt: &[TokenId], response: &[TokenId]) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::Domain("prompt must contain at least one token".into()));
    }
    if let Some(t) = prompt.iter().chain(response).find(|&&t| t as usize >= vocab_size) {
        return Err(Error::Domain(format!("token id {t} out of range for vocab_size {vocab_size}")));
    }
    Ok(())
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Pooled context per position (`rows × d`); empty for the bigram.
    pooled: Vec<T>,
    /// `tanh` activations per position (`rows × h`); empty for the bigram.
    hidden: Vec<T>,
}

/// `out += M · x` for a row-major `rows × cols` matrix.
#[inline]
fn matvec_acc<T: Scalar>(m: &[T], cols: usize, x: &[T], out: &mut [T]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>();
    }
}

/// `out += Mᵀ · x` for a row-major `rows × cols` matrix.
#[inline]
fn matvec_t_acc<T: Scalar>(m: &[T], cols: usize, x: &[T], out: &mut [T]) {
    for (&xr, row) in x.iter().zip(m.chunks_exact(cols)) {
        for (o, &a) in out.iter_mut().zip(row) {
            *o += xr * a;
        }
    }
}

/// `M += a ⊗ b`.
#[inline]
fn outer_acc<T: Scalar>(m: &mut [T], a: &[T], b: &[T]) {
    for (&ar, row) in a.iter().zip(m.chunks_exact_mut(b.len())) {
        for (o, &bc) in row.iter_mut().zip(b) {
            *o += ar * bc;
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    fn mlp_hidden(&self, pooled: &[T], hidden: &mut [T]) {
        let l = self.layout();
        let w1 = &self.values[l.get("W1")];
        hidden.copy_from_slice(&self.values[l.get("b1")]);
        matvec_acc(w1, self.embed_dim, pooled, hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
    }

    fn mlp_logits(&self, hidden: &[T], out: &mut [T]) {
        let l = self.layout();
        out.copy_from_slice(&self.values[l.get("b2")]);
        matvec_acc(&self.values[l.get("W2")], self.hidden_dim, hidden, out);
    }

    fn embedding(&self, t: TokenId) -> &[T] {
        let d = self.embed_dim;
        &self.values[t as usize * d..(t as usize + 1) * d]
    }

    /// Logits of the next token after `context` (prompt followed by any response prefix).
    pub fn next_logits(&self, context: &[TokenId]) -> Result<Vec<T>> {
        check_tokens(self.vocab_size, context, &[])?;
        let v = self.vocab_size;
        Ok(match self.arch {
            Arch::TabularBigram => {
                let prev = *context.last().expect("checked nonempty") as usize;
                self.block("B")[prev * v..(prev + 1) * v].to_vec()
            }
            Arch::MlpPool => {
                let mut pooled = vec![T::zero(); self.embed_dim];
                for &t in context {
                    pooled.iter_mut().zip(self.embedding(t)).for_each(|(p, &e)| *p += e);
                }
                let n = T::from_usize_lossy(context.len());
                pooled.iter_mut().for_each(|p| *p /= n);
                let mut hidden = vec![T::zero(); self.hidden_dim];
                self.mlp_hidden(&pooled, &mut hidden);
                let mut out = vec![T::zero(); v];
                self.mlp_logits(&hidden, &mut out);
                out
            }
        })
    }

    pub fn forward_with_cache(
        &self,
        prompt: &[TokenId],
        response: &[TokenId],
    ) -> Result<(LogitsMatrix<T>, ForwardCache<T>)> {
        check_tokens(self.vocab_size, prompt, response)?;
        let v = self.vocab_size;
        let n = response.len();
        let mut logits = LogitsMatrix::zeros(n, v);
        let mut cache = ForwardCache { pooled: Vec::new(), hidden: Vec::new() };
        match self.arch {
            Arch::TabularBigram => {
                let b = self.block("B");
                let mut prev = *prompt.last().expect("checked nonempty") as usize;
                for (i, &t) in response.iter().enumerate() {
                    logits.row_mut(i).copy_from_slice(&b[prev * v..(prev + 1) * v]);
                    prev = t as usize;
                }
            }
            Arch::MlpPool => {
                let (d, h) = (self.embed_dim, self.hidden_dim);
                cache.pooled = vec![T::zero(); n * d];
                cache.hidden = vec![T::zero(); n * h];
                let mut sum = vec![T::zero(); d];
                for &t in prompt {
                    sum.iter_mut().zip(self.embedding(t)).for_each(|(s, &e)| *s += e);
                }
                for (i, &t) in response.iter().enumerate() {
                    let inv = T::one() / T::from_usize_lossy(prompt.len() + i);
                    let pooled = &mut cache.pooled[i * d..(i + 1) * d];
                    pooled.iter_mut().zip(&sum).for_each(|(p, &s)| *p = s * inv);
                    let hidden = &mut cache.hidden[i * h..(i + 1) * h];
                    self.mlp_hidden(&cache.pooled[i * d..(i + 1) * d], hidden);
                    self.mlp_logits(&cache.hidden[i * h..(i + 1) * h], logits.row_mut(i));
                    sum.iter_mut().zip(self.embedding(t)).for_each(|(s, &e)| *s += e);
                }
            }
        }
        Ok((logits, cache))
    }

    /// Accumulates `Σ_{i,j} dlogits[i][j] · ∂z[i][j]/∂θ` into `grad`.
    pub fn backward_with_cache(
        &self,
        prompt: &[TokenId],
        response: &[TokenId],
        dlogits: &LogitsMatrix<T>,
        cache: &ForwardCache<T>,
        grad: &mut ModelParams<T>,
    ) -> Result<()> {
        if dlogits.shape() != (response.len(), self.vocab_size) {
            return Err(Error::Dimension(format!(
                "dlogits shape {:?} does not match forward output ({}, {})",
                dlogits.shape(),
                response.len(),
                self.vocab_size
            )));
        }
        if !grad.same_shape(self) {
            return Err(Error::Dimension("gradient buffer shape differs from params".into()));
        }
        check_tokens(self.vocab_size, prompt, response)?;
        let v = self.vocab_size;
        let l = self.layout();
        match self.arch {
            Arch::TabularBigram => {
                let gb = &mut grad.values[l.get("B")];
                let mut prev = *prompt.last().expect("checked nonempty") as usize;
                for (i, &t) in response.iter().enumerate() {
                    gb[prev * v..(prev + 1) * v]
                        .iter_mut()
                        .zip(dlogits.row(i))
                        .for_each(|(g, &dz)| *g += dz);
                    prev = t as usize;
                }
            }
            Arch::MlpPool => {
                let (d, h) = (self.embed_dim, self.hidden_dim);
                let n = response.len();
                if cache.pooled.len() != n * d || cache.hidden.len() != n * h {
                    return Err(Error::Dimension("forward cache does not match response".into()));
                }
                let w1 = &self.values[l.get("W1")];
                let w2 = &self.values[l.get("W2")];
                let mut g_w1 = vec![T::zero(); h * d];
                let mut g_b1 = vec![T::zero(); h];
                let mut g_w2 = vec![T::zero(); v * h];
                let mut g_b2 = vec![T::zero(); v];
                // per-position gradient wrt the pooled context, divided by context size
                let mut g_ctx = vec![T::zero(); n * d];
                let mut ds = vec![T::zero(); h];
                for i in 0..n {
                    let dz = dlogits.row(i);
                    let s = &cache.hidden[i * h..(i + 1) * h];
                    let c = &cache.pooled[i * d..(i + 1) * d];
                    g_b2.iter_mut().zip(dz).for_each(|(g, &x)| *g += x);
                    outer_acc(&mut g_w2, dz, s);
                    ds.iter_mut().for_each(|x| *x = T::zero());
                    matvec_t_acc(w2, h, dz, &mut ds);
                    for (x, &sv) in ds.iter_mut().zip(s) {
                        *x *= T::one() - sv * sv;
                    }
                    g_b1.iter_mut().zip(&ds).for_each(|(g, &x)| *g += x);
                    outer_acc(&mut g_w1, &ds, c);
                    let gc = &mut g_ctx[i * d..(i + 1) * d];
                    matvec_t_acc(w1, d, &ds, gc);
                    let inv = T::one() / T::from_usize_lossy(prompt.len() + i);
                    gc.iter_mut().for_each(|x| *x *= inv);
                }
                // response token k feeds every position i > k; prompt tokens feed all
                let mut suffix = vec![T::zero(); d];
                let ge = l.get("E");
                for k in (0..n).rev() {
                    if k + 1 < n {
                        suffix.iter_mut().zip(&g_ctx[(k + 1) * d..(k + 2) * d]).for_each(|(s, &x)| *s += x);
                    }
                    let t = response[k] as usize;
                    grad.values[ge.clone()][t * d..(t + 1) * d]
                        .iter_mut()
                        .zip(&suffix)
                        .for_each(|(g, &x)| *g += x);
                }
                if n > 0 {
                    suffix.iter_mut().zip(&g_ctx[..d]).for_each(|(s, &x)| *s += x);
                }
                for &t in prompt {
                    let t = t as usize;
                    grad.values[ge.clone()][t * d..(t + 1) * d]
                        .iter_mut()
                        .zip(&suffix)
                        .for_each(|(g, &x)| *g += x);
                }
                for (name, buf) in [("W1", g_w1), ("b1", g_b1), ("W2", g_w2), ("b2", g_b2)] {
                    grad.values[l.get(name)].iter_mut().zip(buf).for_each(|(g, x)| *g += x);
                }
            }
        }
        Ok(())
    }
}

/// Logits for every response position; row `i` depends only on `(prompt, y_<i)`.
pub fn forward_logits<T: Scalar>(
    p: &ModelParams<T>,
    prompt: &[TokenId],
    response: &[TokenId],
) -> Result<LogitsMatrix<T>> {
    p.forward_with_cache(prompt, response).map(|(z, _)| z)
}

/// Exact parameter gradient of `Σ dlogits ⊙ z`.
pub fn backward<T: Scalar>(
    p: &ModelParams<T>,
    prompt: &[TokenId],
    response: &[TokenId],
    dlogits: &LogitsMatrix<T>,
) -> Result<ModelParams<T>> {
    if dlogits.shape() != (response.len(), p.vocab_size) {
        return Err(Error::Dimension(format!(
            "dlogits shape {:?} does not match forward output ({}, {})",
            dlogits.shape(),
            response.len(),
            p.vocab_size
        )));
    }
    let (_, cache) = p.forward_with_cache(prompt, response)?;
    let mut grad = p.zeros_like();
    p.backward_with_cache(prompt, response, dlogits, &cache, &mut grad)?;
    Ok(grad)
}

/// `log π(y_i | x, y_<i)` for each row of `logits`.
pub fn token_log_probs<T: Scalar>(logits: &LogitsMatrix<T>, response: &[TokenId]) -> Result<Vec<T>> {
    if logits.rows() != response.len() {
        return Err(Error::Dimension(format!(
            "{} logits rows for a response of length {}",
            logits.rows(),
            response.len()
        )));
    }
    Ok(logits
        .iter_rows()
        .zip(response)
        .map(|(row, &t)| row[t as usize] - crate::numerics::logsumexp_unchecked(row))
        .collect())
}

/// Total and per-token log-likelihood of `response` in nats.
pub fn sequence_log_likelihood<T: Scalar>(
    p: &ModelParams<T>,
    prompt: &[TokenId],
    response: &[TokenId],
) -> Result<(T, Vec<T>)> {
    let z = forward_logits(p, prompt, response)?;
    let per_token = token_log_probs(&z, response)?;
    Ok((per_token.iter().copied().sum(), per_token))
}

/// Greedy argmax decoding (ties resolve to the lowest token id).
pub fn greedy_decode<T: Scalar>(p: &ModelParams<T>, prompt: &[TokenId], max_len: usize) -> Result<Vec<TokenId>> {
    let mut context = prompt.to_vec();
    for _ in 0..max_len {
        let z = p.next_logits(&context)?;
        let mut best = 0;
        for (k, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = k;
            }
        }
        context.push(best as TokenId);
    }
    Ok(context.split_off(prompt.len()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointRecord {
    arch: Arch,
    vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    seed: Option<u64>,
    params: BTreeMap<String, Vec<f64>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Flat JSON record: arch, dims, seed and row-major parameter arrays.
    pub fn to_json(&self) -> Result<String> {
        let params = self
            .layout()
            .blocks
            .iter()
            .map(|(name, r)| (name.to_string(), self.values[r.clone()].iter().map(|v| v.f64()).collect()))
            .collect();
        let rec = CheckpointRecord {
            arch: self.arch,
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            seed: self.seed,
            params,
        };
        Ok(serde_json::to_string(&rec)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: CheckpointRecord = serde_json::from_str(text)?;
        let mut p = Self::zeros(rec.arch, rec.vocab_size, rec.embed_dim, rec.hidden_dim)?;
        p.seed = rec.seed;
        let layout = p.layout();
        if rec.params.len() != layout.blocks.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameter blocks, {:?} expects {}",
                rec.params.len(),
                rec.arch,
                layout.blocks.len()
            )));
        }
        for (name, r) in &layout.blocks {
            let arr = rec
                .params
                .get(*name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing block {name}")))?;
            if arr.len() != r.len() {
                return Err(Error::Format(format!(
                    "block {name} has {} values, expected {}",
                    arr.len(),
                    r.len()
                )));
            }
            for (dst, &src) in p.values[r.clone()].iter_mut().zip(arr) {
                if !src.is_finite() {
                    return Err(Error::Format(format!("block {name} holds a non-finite value")));
                }
                *dst = T::c(src);
            }
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
