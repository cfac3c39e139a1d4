//! A small pre-LayerNorm decoder-only transformer whose forward step takes an
//! arbitrary `d`-dimensional input vector instead of a token id. The output
//! head is tied to the token embedding table.

mod math;
mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{MoiError, Result};

pub use weights::{load_weights, save_weights, FORMAT_TAG};

fn default_init_std() -> f32 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub context: usize,
    pub init_seed: u64,
    /// Standard deviation of the Gaussian weight initialisation.
    #[serde(default = "default_init_std")]
    pub init_std: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab: 256,
            dim: 64,
            heads: 4,
            layers: 2,
            context: 256,
            init_seed: 42,
            init_std: default_init_std(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(MoiError::InvalidVocabulary(self.vocab));
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(MoiError::InvalidConfig(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.context == 0 {
            return Err(MoiError::InvalidConfig("context must be ≥ 1".into()));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(MoiError::InvalidConfig(format!("invalid init_std {}", self.init_std)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn hidden(&self) -> usize {
        4 * self.dim
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    ln1_w: Vec<f32>,
    ln1_b: Vec<f32>,
    wq: Vec<f32>,
    bq: Vec<f32>,
    wk: Vec<f32>,
    bk: Vec<f32>,
    wv: Vec<f32>,
    bv: Vec<f32>,
    wo: Vec<f32>,
    bo: Vec<f32>,
    ln2_w: Vec<f32>,
    ln2_b: Vec<f32>,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
}

impl Layer {
    fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            ln1_w: vec![0.0; d],
            ln1_b: vec![0.0; d],
            wq: vec![0.0; d * d],
            bq: vec![0.0; d],
            wk: vec![0.0; d * d],
            bk: vec![0.0; d],
            wv: vec![0.0; d * d],
            bv: vec![0.0; d],
            wo: vec![0.0; d * d],
            bo: vec![0.0; d],
            ln2_w: vec![0.0; d],
            ln2_b: vec![0.0; d],
            w1: vec![0.0; hidden * d],
            b1: vec![0.0; hidden],
            w2: vec![0.0; d * hidden],
            b2: vec![0.0; d],
        }
    }
}

/// How a parameter tensor is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TensorRole {
    Weight,
    Gain,
    Bias,
}

pub(crate) struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: TensorRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    tok_emb: EmbeddingTable,
    pos_emb: Vec<f32>,
    layers: Vec<Layer>,
    lnf_w: Vec<f32>,
    lnf_b: Vec<f32>,
}

impl Model {
    fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (v, d, h) = (config.vocab, config.dim, config.hidden());
        Ok(Self {
            tok_emb: EmbeddingTable::new(v, d, vec![0.0; v * d])?,
            pos_emb: vec![0.0; config.context * d],
            layers: (0..config.layers).map(|_| Layer::zeros(d, h)).collect(),
            lnf_w: vec![0.0; d],
            lnf_b: vec![0.0; d],
            config,
        })
    }

    /// Tensor names, shapes and roles in canonical (file) order.
    pub(crate) fn tensor_specs(config: &ModelConfig) -> Vec<TensorSpec> {
        use TensorRole::*;
        let (v, d, h, c) = (config.vocab, config.dim, config.hidden(), config.context);
        let mut specs = vec![
            TensorSpec { name: "tok_emb".into(), shape: vec![v, d], role: Weight },
            TensorSpec { name: "pos_emb".into(), shape: vec![c, d], role: Weight },
        ];
        for l in 0..config.layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            let entries: [(&str, Vec<usize>, TensorRole); 16] = [
                ("ln1.weight", vec![d], Gain),
                ("ln1.bias", vec![d], Bias),
                ("attn.wq", vec![d, d], Weight),
                ("attn.bq", vec![d], Bias),
                ("attn.wk", vec![d, d], Weight),
                ("attn.bk", vec![d], Bias),
                ("attn.wv", vec![d, d], Weight),
                ("attn.bv", vec![d], Bias),
                ("attn.wo", vec![d, d], Weight),
                ("attn.bo", vec![d], Bias),
                ("ln2.weight", vec![d], Gain),
                ("ln2.bias", vec![d], Bias),
                ("mlp.w1", vec![h, d], Weight),
                ("mlp.b1", vec![h], Bias),
                ("mlp.w2", vec![d, h], Weight),
                ("mlp.b2", vec![d], Bias),
            ];
            specs.extend(entries.into_iter().map(|(n, shape, role)| TensorSpec { name: p(n), shape, role }));
        }
        specs.push(TensorSpec { name: "ln_f.weight".into(), shape: vec![d], role: Gain });
        specs.push(TensorSpec { name: "ln_f.bias".into(), shape: vec![d], role: Bias });
        specs
    }

    /// Tensors in the same order as [`Model::tensor_specs`].
    pub(crate) fn tensors(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = vec![self.tok_emb.as_slice(), &self.pos_emb];
        for l in &self.layers {
            out.extend([
                &l.ln1_w[..], &l.ln1_b, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                &l.ln2_w, &l.ln2_b, &l.w1, &l.b1, &l.w2, &l.b2,
            ]);
        }
        out.push(&self.lnf_w);
        out.push(&self.lnf_b);
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = vec![self.tok_emb.as_mut_slice(), &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_w[..], &mut l.ln1_b, &mut l.wq, &mut l.bq, &mut l.wk, &mut l.bk,
                &mut l.wv, &mut l.bv, &mut l.wo, &mut l.bo, &mut l.ln2_w, &mut l.ln2_b,
                &mut l.w1, &mut l.b1, &mut l.w2, &mut l.b2,
            ]);
        }
        out.push(&mut self.lnf_w);
        out.push(&mut self.lnf_b);
        out
    }

    /// Weight matrices and embeddings are drawn from `N(0, init_std²)` in
    /// canonical tensor order from a ChaCha8 stream seeded with `init_seed`;
    /// layer-norm gains start at 1 and biases at 0.
    pub fn init_random(config: ModelConfig) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let specs = Self::tensor_specs(&model.config);
        let normal = Normal::new(0.0f32, model.config.init_std)
            .map_err(|e| MoiError::InvalidConfig(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.init_seed);
        for (spec, tensor) in specs.iter().zip(model.tensors_mut()) {
            match spec.role {
                TensorRole::Weight => tensor.iter_mut().for_each(|x| *x = normal.sample(&mut rng)),
                TensorRole::Gain => tensor.fill(1.0),
                TensorRole::Bias => tensor.fill(0.0),
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.tok_emb
    }

    /// FNV-1a over the little-endian bytes of every tensor in canonical order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for x in t {
                for b in x.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn new_state(&self) -> DecoderState {
        DecoderState::new(&self.config)
    }

    /// Appends one position holding `input` and returns next-token logits.
    pub fn forward_step(&self, state: &mut DecoderState, input: &[f32]) -> Result<Vec<f32>> {
        let cfg = &self.config;
        let (d, hd) = (cfg.dim, cfg.head_dim());
        if state.len >= cfg.context {
            return Err(MoiError::Capacity {
                capacity: cfg.context,
                requested: state.len + 1,
            });
        }
        if input.len() != d {
            return Err(MoiError::InvalidInput(format!(
                "input has {} components, model dimension is {d}",
                input.len()
            )));
        }
        let pos = state.len;
        let s = &mut state.scratch;
        for ((x, &e), &p) in s.x.iter_mut().zip(input).zip(&self.pos_emb[pos * d..(pos + 1) * d]) {
            *x = e + p;
        }
        let scale = 1.0 / libm::sqrtf(hd as f32);

        for (layer, cache) in self.layers.iter().zip(state.caches.iter_mut()) {
            math::layer_norm(&s.x, &layer.ln1_w, &layer.ln1_b, &mut s.norm);
            math::matvec(&layer.wq, &layer.bq, &s.norm, &mut s.q);
            math::matvec(&layer.wk, &layer.bk, &s.norm, &mut cache.k[pos * d..(pos + 1) * d]);
            math::matvec(&layer.wv, &layer.bv, &s.norm, &mut cache.v[pos * d..(pos + 1) * d]);

            for head in 0..cfg.heads {
                let off = head * hd;
                let q = &s.q[off..off + hd];
                let scores = &mut s.scores[..=pos];
                for (t, sc) in scores.iter_mut().enumerate() {
                    *sc = math::dot(q, &cache.k[t * d + off..t * d + off + hd]) * scale;
                }
                math::softmax_in_place(scores);
                let out = &mut s.attn[off..off + hd];
                out.fill(0.0);
                for (t, &a) in scores.iter().enumerate() {
                    for (o, &v) in out.iter_mut().zip(&cache.v[t * d + off..t * d + off + hd]) {
                        *o += a * v;
                    }
                }
            }
            math::matvec(&layer.wo, &layer.bo, &s.attn, &mut s.proj);
            for (x, p) in s.x.iter_mut().zip(&s.proj) {
                *x += p;
            }

            math::layer_norm(&s.x, &layer.ln2_w, &layer.ln2_b, &mut s.norm);
            math::matvec(&layer.w1, &layer.b1, &s.norm, &mut s.hidden);
            s.hidden.iter_mut().for_each(|v| *v = math::gelu(*v));
            math::matvec(&layer.w2, &layer.b2, &s.hidden, &mut s.proj);
            for (x, p) in s.x.iter_mut().zip(&s.proj) {
                *x += p;
            }
        }
        state.len += 1;

        math::layer_norm(&s.x, &self.lnf_w, &self.lnf_b, &mut s.norm);
        let mut logits = vec![0f32; cfg.vocab];
        for (l, row) in logits.iter_mut().zip(self.tok_emb.as_slice().chunks_exact(d)) {
            *l = math::dot(row, &s.norm);
        }
        Ok(logits)
    }

    /// Recomputes logits for every position of `inputs` from scratch,
    /// layer by layer over the whole sequence, without a decoder cache.
    pub fn forward_sequence(&self, inputs: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        let cfg = &self.config;
        let (d, hd, n) = (cfg.dim, cfg.head_dim(), inputs.len());
        if n > cfg.context {
            return Err(MoiError::Capacity {
                capacity: cfg.context,
                requested: n,
            });
        }
        let mut xs: Vec<Vec<f32>> = Vec::with_capacity(n);
        for (pos, input) in inputs.iter().enumerate() {
            if input.len() != d {
                return Err(MoiError::InvalidInput(format!("input {pos} has wrong dimension")));
            }
            let p = &self.pos_emb[pos * d..(pos + 1) * d];
            xs.push(input.iter().zip(p).map(|(a, b)| a + b).collect());
        }
        let scale = 1.0 / libm::sqrtf(hd as f32);
        let mut norm = vec![0f32; d];
        for layer in &self.layers {
            let (mut qs, mut ks, mut vs) = (vec![vec![0f32; d]; n], vec![vec![0f32; d]; n], vec![vec![0f32; d]; n]);
            for t in 0..n {
                math::layer_norm(&xs[t], &layer.ln1_w, &layer.ln1_b, &mut norm);
                math::matvec(&layer.wq, &layer.bq, &norm, &mut qs[t]);
                math::matvec(&layer.wk, &layer.bk, &norm, &mut ks[t]);
                math::matvec(&layer.wv, &layer.bv, &norm, &mut vs[t]);
            }
            for t in 0..n {
                let mut attn = vec![0f32; d];
                for head in 0..cfg.heads {
                    let r = head * hd..(head + 1) * hd;
                    let mut scores: Vec<f32> = (0..=t)
                        .map(|u| math::dot(&qs[t][r.clone()], &ks[u][r.clone()]) * scale)
                        .collect();
                    math::softmax_in_place(&mut scores);
                    for (u, &a) in scores.iter().enumerate() {
                        for (o, &v) in attn[r.clone()].iter_mut().zip(&vs[u][r.clone()]) {
                            *o += a * v;
                        }
                    }
                }
                let mut proj = vec![0f32; d];
                math::matvec(&layer.wo, &layer.bo, &attn, &mut proj);
                xs[t].iter_mut().zip(&proj).for_each(|(x, p)| *x += p);
            }
            for x in xs.iter_mut() {
                math::layer_norm(x, &layer.ln2_w, &layer.ln2_b, &mut norm);
                let mut hidden = vec![0f32; cfg.hidden()];
                math::matvec(&layer.w1, &layer.b1, &norm, &mut hidden);
                hidden.iter_mut().for_each(|v| *v = math::gelu(*v));
                let mut proj = vec![0f32; d];
                math::matvec(&layer.w2, &layer.b2, &hidden, &mut proj);
                x.iter_mut().zip(&proj).for_each(|(a, p)| *a += p);
            }
        }
        Ok(xs
            .iter()
            .map(|x| {
                math::layer_norm(x, &self.lnf_w, &self.lnf_b, &mut norm);
                self.tok_emb
                    .as_slice()
                    .chunks_exact(d)
                    .map(|row| math::dot(row, &norm))
                    .collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    k: Vec<f32>,
    v: Vec<f32>,
}

#[derive(Debug, Clone)]
struct Scratch {
    x: Vec<f32>,
    norm: Vec<f32>,
    q: Vec<f32>,
    attn: Vec<f32>,
    proj: Vec<f32>,
    hidden: Vec<f32>,
    scores: Vec<f32>,
}

/// Per-session key/value cache for incremental decoding.
#[derive(Debug, Clone)]
pub struct DecoderState {
    caches: Vec<LayerCache>,
    len: usize,
    scratch: Scratch,
}

impl DecoderState {
    fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        Self {
            caches: (0..cfg.layers)
                .map(|_| LayerCache {
                    k: vec![0.0; cfg.context * d],
                    v: vec![0.0; cfg.context * d],
                })
                .collect(),
            len: 0,
            scratch: Scratch {
                x: vec![0.0; d],
                norm: vec![0.0; d],
                q: vec![0.0; d],
                attn: vec![0.0; d],
                proj: vec![0.0; d],
                hidden: vec![0.0; cfg.hidden()],
                scores: vec![0.0; cfg.context],
            },
        }
    }

    /// Number of positions processed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}
