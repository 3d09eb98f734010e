//! A small seeded decoder-only transformer with attention dropout that
//! stays active at inference time.
//!
//! Weights are random (seeded), not trained. The model exists to exercise
//! the dropout mechanism end to end: prompt → token ids → last-position
//! logits → choice probabilities.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::PromptBundle;
use crate::seed::derive_seed;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Columns `start..start+width`.
    fn cols_slice(&self, start: usize, width: usize) -> Mat {
        let mut out = Mat::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    fn rows_from(&self, start: usize) -> Mat {
        Mat {
            rows: self.rows - start,
            cols: self.cols,
            data: self.data[start * self.cols..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropoutScaling {
    /// Surviving weights are multiplied by 1/(1-r).
    #[default]
    Inverted,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
    pub noise_seed: u64,
    pub scaling: DropoutScaling,
}

impl DropoutSpec {
    pub fn off() -> Self {
        DropoutSpec {
            rate: 0.0,
            noise_seed: 0,
            scaling: DropoutScaling::Inverted,
        }
    }

    pub fn new(rate: f64, noise_seed: u64) -> Result<Self> {
        let s = DropoutSpec {
            rate,
            noise_seed,
            scaling: DropoutScaling::Inverted,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rate.is_finite() || !(0.0..1.0).contains(&self.rate) {
            return Err(Error::OutOfDomain {
                value: self.rate,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(())
    }

    fn keep_scale(&self) -> f64 {
        match self.scaling {
            DropoutScaling::Inverted => 1.0 / (1.0 - self.rate),
            DropoutScaling::None => 1.0,
        }
    }
}

/// Additive causal mask: 0 on and below the diagonal, -inf above.
/// Query `t` of `q_len` sits at absolute position `offset + t`.
pub fn causal_mask(q_len: usize, k_len: usize, offset: usize) -> Mat {
    let mut m = Mat::zeros(q_len, k_len);
    for t in 0..q_len {
        for s in (offset + t + 1)..k_len {
            m.data[t * k_len + s] = f64::NEG_INFINITY;
        }
    }
    m
}

/// Row-wise softmax of QK^T/sqrt(d_k) + M.
pub fn attention_weights(q: &Mat, k: &Mat, mask: &Mat) -> Result<Mat> {
    if q.cols != k.cols {
        return Err(Error::Shape(format!(
            "query width {} vs key width {}",
            q.cols, k.cols
        )));
    }
    if mask.rows != q.rows || mask.cols != k.rows {
        return Err(Error::Shape(format!(
            "mask {}x{} for {} queries and {} keys",
            mask.rows, mask.cols, q.rows, k.rows
        )));
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut w = Mat::zeros(q.rows, k.rows);
    for t in 0..q.rows {
        let qt = q.row(t);
        let row = w.row_mut(t);
        let mut max = f64::NEG_INFINITY;
        for (s, slot) in row.iter_mut().enumerate() {
            let dot: f64 = qt.iter().zip(k.row(s)).map(|(a, b)| a * b).sum();
            let v = dot * scale + mask.at(t, s);
            *slot = v;
            max = max.max(v);
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::Shape(format!("query {t} attends to nothing")));
        }
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(w)
}

/// Apply an explicit keep-mask (true = keep) to attention weights.
pub fn dropout_with_keep(weights: &Mat, keep: &[bool], spec: &DropoutSpec) -> Result<Mat> {
    spec.validate()?;
    if keep.len() != weights.data.len() {
        return Err(Error::Shape(format!(
            "keep mask of {} for {} weights",
            keep.len(),
            weights.data.len()
        )));
    }
    let scale = spec.keep_scale();
    let data = weights
        .data
        .iter()
        .zip(keep)
        .map(|(w, k)| if *k { w * scale } else { 0.0 })
        .collect();
    Ok(Mat {
        rows: weights.rows,
        cols: weights.cols,
        data,
    })
}

/// Bernoulli dropout over attention weights. Row `t` draws from stream
/// position `(row_offset + t) * cols`, so a row's mask does not depend on
/// which other rows are computed.
fn dropout_rows(weights: &mut Mat, spec: &DropoutSpec, rng: &mut ChaCha8Rng, row_offset: usize) {
    if spec.rate == 0.0 {
        return;
    }
    let scale = spec.keep_scale();
    let cols = weights.cols;
    for t in 0..weights.rows {
        // one f64 draw consumes two 32-bit words
        rng.set_word_pos(((row_offset + t) * cols * 2) as u128);
        for w in weights.row_mut(t) {
            if rng.random::<f64>() < spec.rate {
                *w = 0.0;
            } else {
                *w *= scale;
            }
        }
    }
}

fn noise_rng(noise_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(noise_seed, "attention-dropout"));
    rng.set_stream(stream);
    rng
}

/// dropout(softmax(QK^T/sqrt(d_k) + M), r) · V
pub fn attention_with_dropout(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    mask: &Mat,
    spec: &DropoutSpec,
) -> Result<Mat> {
    spec.validate()?;
    if k.rows != v.rows {
        return Err(Error::Shape(format!(
            "{} keys but {} values",
            k.rows, v.rows
        )));
    }
    let mut w = attention_weights(q, k, mask)?;
    let mut rng = noise_rng(spec.noise_seed, 0);
    dropout_rows(&mut w, spec, &mut rng, 0);
    w.matmul(v)
}

/// Plain attention with no dropout.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, mask: &Mat) -> Result<Mat> {
    attention_weights(q, k, mask)?.matmul(v)
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

const SPECIALS: [&str; 8] = ["<bos>", "<system>", "<user>", "<assistant>", "1", "2", "A", "B"];

/// Word-level hashing tokenizer. Reserved ids cover role markers and the
/// choice tokens; every other word hashes into the remaining buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyTokenizer {
    pub vocab_size: usize,
}

impl ToyTokenizer {
    pub fn id_of(&self, word: &str) -> u32 {
        if let Some(i) = SPECIALS.iter().position(|s| *s == word) {
            return i as u32;
        }
        // FNV-1a
        let mut h: u64 = 0xcbf29ce484222325;
        for b in word.to_ascii_lowercase().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
        let buckets = (self.vocab_size - SPECIALS.len()) as u64;
        (SPECIALS.len() as u64 + h % buckets) as u32
    }

    pub fn words(text: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() || c == '-' {
                start.get_or_insert(i);
            } else {
                if let Some(s) = start.take() {
                    out.push(&text[s..i]);
                }
                if !c.is_whitespace() {
                    out.push(&text[i..i + c.len_utf8()]);
                }
            }
        }
        if let Some(s) = start {
            out.push(&text[s..]);
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        Self::words(text).into_iter().map(|w| self.id_of(w)).collect()
    }

    /// `<bos> <system> … <user> … <assistant> prefix`
    pub fn encode_prompt(&self, p: &PromptBundle) -> Vec<u32> {
        let mut ids = vec![0, 1];
        ids.extend(self.encode(&p.system));
        ids.push(2);
        ids.extend(self.encode(&p.user));
        ids.push(3);
        ids.extend(self.encode(&p.assistant_prefix));
        ids
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub init_seed: u64,
    /// Std multiplier on query/key projections; larger means sharper
    /// attention.
    pub qk_gain: f64,
    /// Std multiplier on the unembedding; sets the spread of logits.
    pub logit_gain: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            vocab_size: 512,
            d_model: 64,
            heads: 4,
            layers: 2,
            d_ff: 256,
            init_seed: 0,
            qk_gain: 2.0,
            logit_gain: 1.0,
        }
    }
}

impl ToyConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Shape(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.vocab_size <= SPECIALS.len() || self.layers == 0 || self.d_ff == 0 {
            return Err(Error::Shape("degenerate toy config".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    wq: Mat,
    wk: Mat,
    wv: Mat,
    wo: Mat,
    w1: Mat,
    b1: Vec<f64>,
    w2: Mat,
    b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer {
    config: ToyConfig,
    embed: Mat,
    blocks: Vec<Block>,
    unembed: Mat,
}

fn layer_norm(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    for v in x.iter_mut() {
        *v = (*v - mean) * inv;
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.7978845608028654 * (x + 0.044715 * x * x * x)).tanh())
}

fn sinusoid(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            if i % 2 == 0 {
                a.sin()
            } else {
                a.cos()
            }
        })
        .collect()
}

impl ToyTransformer {
    pub fn new(config: ToyConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let embed = Mat::randn(&mut rng, config.vocab_size, d, 1.0);
        let inv_d = 1.0 / (d as f64).sqrt();
        let blocks = (0..config.layers)
            .map(|_| Block {
                wq: Mat::randn(&mut rng, d, d, config.qk_gain * inv_d),
                wk: Mat::randn(&mut rng, d, d, config.qk_gain * inv_d),
                wv: Mat::randn(&mut rng, d, d, inv_d),
                wo: Mat::randn(&mut rng, d, d, inv_d),
                w1: Mat::randn(&mut rng, d, config.d_ff, inv_d),
                b1: vec![0.0; config.d_ff],
                w2: Mat::randn(&mut rng, config.d_ff, d, 1.0 / (config.d_ff as f64).sqrt()),
                b2: vec![0.0; d],
            })
            .collect();
        let unembed = Mat::randn(&mut rng, d, config.vocab_size, config.logit_gain * inv_d);
        Ok(ToyTransformer {
            config,
            embed,
            blocks,
            unembed,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> ToyTokenizer {
        ToyTokenizer {
            vocab_size: self.config.vocab_size,
        }
    }

    fn embed_ids(&self, ids: &[u32]) -> Result<Mat> {
        if ids.is_empty() {
            return Err(Error::Empty("token ids"));
        }
        let d = self.config.d_model;
        let mut x = Mat::zeros(ids.len(), d);
        for (t, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= self.config.vocab_size {
                return Err(Error::InvalidArgument(format!(
                    "token id {id} outside vocabulary of {}",
                    self.config.vocab_size
                )));
            }
            let pe = sinusoid(t, d);
            for (j, v) in x.row_mut(t).iter_mut().enumerate() {
                *v = self.embed.at(id, j) + pe[j];
            }
        }
        Ok(x)
    }

    /// Residual stream after all blocks. With `last_only`, the final block
    /// computes only the last position (earlier positions cannot affect it
    /// through the causal mask), and the returned matrix has one row.
    fn hidden(&self, ids: &[u32], spec: &DropoutSpec, last_only: bool) -> Result<Mat> {
        spec.validate()?;
        let mut x = self.embed_ids(ids)?;
        let t_len = ids.len();
        let d_k = self.config.d_k();
        let n_layers = self.blocks.len();
        for (l, b) in self.blocks.iter().enumerate() {
            let q_start = if last_only && l + 1 == n_layers {
                t_len - 1
            } else {
                0
            };
            let mut normed = x.clone();
            for r in 0..normed.rows {
                layer_norm(normed.row_mut(r));
            }
            let q_in = normed.rows_from(q_start);
            let q = q_in.matmul(&b.wq)?;
            let k = normed.matmul(&b.wk)?;
            let v = normed.matmul(&b.wv)?;
            let mask = causal_mask(q.rows, t_len, q_start);
            let mut heads_out = Mat::zeros(q.rows, self.config.d_model);
            for h in 0..self.config.heads {
                let qh = q.cols_slice(h * d_k, d_k);
                let kh = k.cols_slice(h * d_k, d_k);
                let vh = v.cols_slice(h * d_k, d_k);
                let mut w = attention_weights(&qh, &kh, &mask)?;
                let mut rng = noise_rng(spec.noise_seed, (l * self.config.heads + h) as u64);
                dropout_rows(&mut w, spec, &mut rng, q_start);
                let o = w.matmul(&vh)?;
                for r in 0..o.rows {
                    heads_out.row_mut(r)[h * d_k..(h + 1) * d_k].copy_from_slice(o.row(r));
                }
            }
            let attn = heads_out.matmul(&b.wo)?;
            let mut x_next = x.rows_from(q_start);
            for (xv, av) in x_next.data.iter_mut().zip(&attn.data) {
                *xv += av;
            }
            let mut normed2 = x_next.clone();
            for r in 0..normed2.rows {
                layer_norm(normed2.row_mut(r));
            }
            let mut hmid = normed2.matmul(&b.w1)?;
            for r in 0..hmid.rows {
                for (v, bias) in hmid.row_mut(r).iter_mut().zip(&b.b1) {
                    *v = gelu(*v + bias);
                }
            }
            let mlp = hmid.matmul(&b.w2)?;
            for r in 0..x_next.rows {
                let row = x_next.row_mut(r);
                for (j, v) in row.iter_mut().enumerate() {
                    *v += mlp.at(r, j) + b.b2[j];
                }
            }
            x = x_next;
        }
        Ok(x)
    }

    fn logits_of(&self, hidden_row: &[f64]) -> Result<Vec<f64>> {
        let mut h = hidden_row.to_vec();
        layer_norm(&mut h);
        let out = Mat::from_vec(1, h.len(), h)?.matmul(&self.unembed)?;
        if out.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("toy logits".into()));
        }
        Ok(out.data)
    }

    /// Logits over the vocabulary at the last position.
    pub fn forward_logits(&self, ids: &[u32], spec: &DropoutSpec) -> Result<Vec<f64>> {
        let h = self.hidden(ids, spec, true)?;
        self.logits_of(h.row(0))
    }

    /// Logits at every position (full causal pass).
    pub fn forward_all(&self, ids: &[u32], spec: &DropoutSpec) -> Result<Mat> {
        let h = self.hidden(ids, spec, false)?;
        let mut out = Mat::zeros(h.rows, self.config.vocab_size);
        for r in 0..h.rows {
            let l = self.logits_of(h.row(r))?;
            out.row_mut(r).copy_from_slice(&l);
        }
        Ok(out)
    }

    // -- snapshot ---------------------------------------------------------

    const MAGIC: &'static [u8; 8] = b"MUTOYW\0\0";
    pub const SNAPSHOT_VERSION: u32 = 1;

    fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.embed.data];
        for b in &self.blocks {
            v.extend([
                b.wq.data.as_slice(),
                &b.wk.data,
                &b.wv.data,
                &b.wo.data,
                &b.w1.data,
                &b.b1,
                &b.w2.data,
                &b.b2,
            ]);
        }
        v.push(&self.unembed.data);
        v
    }

    /// Versioned little-endian weight snapshot.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::SNAPSHOT_VERSION.to_le_bytes())?;
        for n in [c.vocab_size, c.d_model, c.heads, c.layers, c.d_ff] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        w.write_all(&c.init_seed.to_le_bytes())?;
        w.write_all(&c.qk_gain.to_le_bytes())?;
        w.write_all(&c.logit_gain.to_le_bytes())?;
        for t in self.tensors() {
            w.write_all(&(t.len() as u64).to_le_bytes())?;
            for v in t {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Parse("not a toy weight snapshot".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != Self::SNAPSHOT_VERSION {
            return Err(Error::Parse(format!("snapshot version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut u64_at = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            *d = u64_at(&mut r)? as usize;
        }
        let init_seed = u64_at(&mut r)?;
        let qk_gain = f64::from_bits(u64_at(&mut r)?);
        let logit_gain = f64::from_bits(u64_at(&mut r)?);
        let config = ToyConfig {
            vocab_size: dims[0],
            d_model: dims[1],
            heads: dims[2],
            layers: dims[3],
            d_ff: dims[4],
            init_seed,
            qk_gain,
            logit_gain,
        };
        // shapes come from a fresh model; values are overwritten below
        let mut model = ToyTransformer::new(config)?;
        let mut slots: Vec<&mut Vec<f64>> = vec![&mut model.embed.data];
        for b in model.blocks.iter_mut() {
            slots.extend([
                &mut b.wq.data,
                &mut b.wk.data,
                &mut b.wv.data,
                &mut b.wo.data,
                &mut b.w1.data,
                &mut b.b1,
                &mut b.w2.data,
                &mut b.b2,
            ]);
        }
        slots.push(&mut model.unembed.data);
        for slot in slots {
            let n = u64_at(&mut r)? as usize;
            if n != slot.len() {
                return Err(Error::Shape(format!(
                    "snapshot tensor of {n} values, expected {}",
                    slot.len()
                )));
            }
            for v in slot.iter_mut() {
                *v = f64::from_bits(u64_at(&mut r)?);
            }
        }
        Ok(model)
    }
}
