//! Conditional velocity network: a small diffusion transformer over motion
//! frames.
//!
//! Each block runs self-attention over frames (RoPE on unit-normalized
//! queries and keys, logits scaled by a learned per-layer scalar),
//! cross-attention to embedded choreography tokens, and a GELU feed-forward
//! layer. Shift, scale and gate of every sublayer come from a conditioning
//! vector `c = time_mlp(t) + identity_proj(s)` through zero-initialized
//! projections, so a fresh network is the identity on its residual stream and
//! outputs exactly zero through its zero-initialized head.
//!
//! The transformer output is added to a gated per-dimension baseline: the
//! posterior-mean velocity under an independent Gaussian prior on each
//! generator dim. The hidden width can be smaller than the motion width, in
//! which case noise outside the head's column space could otherwise never
//! be removed; the baseline handles it in closed form for every `t`.

mod checkpoint;
mod optim;

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, Var};
use crate::repr::IDENTITY_DIM;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC,
};
pub use optim::{AdamW, AdamWConfig, Ema};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("config error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    /// Width of a motion frame in generator space.
    pub motion_dim: usize,
    pub token_vocab: usize,
    pub l_max: usize,
    pub max_frames: usize,
    pub dropout: f64,
    pub cond_drop_prob: f64,
    pub rope_base: f64,
    /// Initial value of the learned attention-logit scale.
    pub qk_scale_init: f64,
}

impl ModelConfig {
    /// 2 layers, 64 wide, 4 heads.
    pub fn desk(motion_dim: usize, token_vocab: usize) -> Self {
        ModelConfig {
            layers: 2,
            hidden_dim: 64,
            ffn_dim: 256,
            heads: 4,
            motion_dim,
            token_vocab,
            l_max: 256,
            max_frames: 256,
            dropout: 0.05,
            cond_drop_prob: 0.10,
            rope_base: 10_000.0,
            qk_scale_init: 10.0,
        }
    }

    /// 12 layers, 1024 wide. Not trained here; kept for completeness.
    pub fn full(motion_dim: usize, token_vocab: usize) -> Self {
        ModelConfig {
            layers: 12,
            hidden_dim: 1024,
            ffn_dim: 4096,
            heads: 16,
            ..Self::desk(motion_dim, token_vocab)
        }
    }

    pub fn preset(name: &str, motion_dim: usize, token_vocab: usize) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk(motion_dim, token_vocab)),
            "full" => Some(Self::full(motion_dim, token_vocab)),
            _ => None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || self.hidden_dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden_dim {} is not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(ModelError::Config(
                "head dimension must be even for RoPE".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.cond_drop_prob) || !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(
                "dropout probabilities out of range".into(),
            ));
        }
        if self.layers == 0 || self.motion_dim == 0 || self.token_vocab == 0 || self.ffn_dim == 0 {
            return Err(ModelError::Config("zero-sized model dimension".into()));
        }
        Ok(())
    }
}

/// Conditioning for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle {
    pub tokens: Vec<u32>,
    pub identity: Vec<f64>,
    pub t: f64,
    pub drop_text: bool,
    pub drop_identity: bool,
}

impl ConditioningBundle {
    pub fn new(tokens: Vec<u32>, identity: Vec<f64>, t: f64) -> Self {
        ConditioningBundle {
            tokens,
            identity,
            t,
            drop_text: false,
            drop_identity: false,
        }
    }

    /// Same timestep with both conditions replaced by their null embeddings.
    pub fn unconditional(&self) -> Self {
        ConditioningBundle {
            drop_text: true,
            drop_identity: true,
            ..self.clone()
        }
    }

    pub fn with_t(&self, t: f64) -> Self {
        ConditioningBundle { t, ..self.clone() }
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Mat) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.position(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.position(name).map(move |i| &mut self.values[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Graph handles for every parameter, in store order.
pub struct ParamVars {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        self.vars[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Gradients in store order.
pub type ParamGrads = Vec<Mat>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
    Mat::from_shape_fn((fan_in, fan_out), |_| dist.sample(rng))
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("valid std");
    Mat::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Sinusoidal features of `t` (scaled by 1000), `[cos | sin]`, width `dim`.
pub fn timestep_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let (s, c) = (1000.0 * t * freq).sin_cos();
        out[i] = c;
        out[half + i] = s;
    }
    out
}

impl Model {
    /// Fresh parameters: Xavier-uniform linear weights, zero biases, small
    /// Gaussian embeddings, zero AdaLN projections, head and prior gate.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, f, d) = (config.hidden_dim, config.ffn_dim, config.motion_dim);
        let mut p = ParamStore::new();
        let linear = |p: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize| {
            p.insert(&format!("{name}.w"), xavier(rng, i, o));
            p.insert(&format!("{name}.b"), Mat::zeros((1, o)));
        };
        linear(&mut p, &mut rng, "in_proj", d, h);
        linear(&mut p, &mut rng, "time.l1", h, h);
        linear(&mut p, &mut rng, "time.l2", h, h);
        linear(&mut p, &mut rng, "ident", IDENTITY_DIM, h);
        p.insert("null.identity", gaussian(&mut rng, 1, h, 0.02));
        p.insert("null.text", gaussian(&mut rng, 1, h, 0.02));
        p.insert("tok.emb", gaussian(&mut rng, config.token_vocab, h, 0.02));
        for l in 0..config.layers {
            let b = format!("blk{l}");
            p.insert(&format!("{b}.ada.w"), Mat::zeros((h, 9 * h)));
            p.insert(&format!("{b}.ada.b"), Mat::zeros((1, 9 * h)));
            for name in ["q", "k", "v", "o"] {
                linear(&mut p, &mut rng, &format!("{b}.attn.{name}"), h, h);
            }
            p.insert(
                &format!("{b}.attn.g"),
                Mat::from_elem((1, 1), config.qk_scale_init),
            );
            for name in ["q", "k", "v", "o"] {
                linear(&mut p, &mut rng, &format!("{b}.cross.{name}"), h, h);
            }
            linear(&mut p, &mut rng, &format!("{b}.ffn.l1"), h, f);
            linear(&mut p, &mut rng, &format!("{b}.ffn.l2"), f, h);
        }
        p.insert("final.ada.w", Mat::zeros((h, 2 * h)));
        p.insert("final.ada.b", Mat::zeros((1, 2 * h)));
        p.insert("head.w", Mat::zeros((h, d)));
        p.insert("head.b", Mat::zeros((1, d)));
        p.insert("prior.gate", Mat::zeros((1, d)));
        p.insert("prior.mean", Mat::zeros((1, d)));
        p.insert("prior.std", Mat::ones((1, d)));
        Ok(Model { config, params: p })
    }

    /// Registers parameters on `g`; `trainable = false` adds them as
    /// constants so no gradients are tracked.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        let vars = self
            .params
            .values()
            .iter()
            .map(|v| {
                if trainable {
                    g.param(v.clone())
                } else {
                    g.constant(v.clone())
                }
            })
            .collect();
        ParamVars {
            vars,
            index: self.params.index.clone(),
        }
    }

    fn check_inputs(
        &self,
        x: &Mat,
        seq_len: usize,
        conds: &[ConditioningBundle],
    ) -> Result<(), ModelError> {
        let c = &self.config;
        if seq_len == 0 || conds.is_empty() || x.nrows() != seq_len * conds.len() {
            return Err(ModelError::Shape(format!(
                "{} rows for {} sequences of length {seq_len}",
                x.nrows(),
                conds.len()
            )));
        }
        if x.ncols() != c.motion_dim {
            return Err(ModelError::Shape(format!(
                "frame width {} but the model expects {}",
                x.ncols(),
                c.motion_dim
            )));
        }
        if seq_len > c.max_frames {
            return Err(ModelError::Shape(format!(
                "sequence length {seq_len} exceeds max_frames {}",
                c.max_frames
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("input frames".into()));
        }
        for (i, cond) in conds.iter().enumerate() {
            if !(0.0..=1.0).contains(&cond.t) {
                return Err(ModelError::Shape(format!("t = {} outside [0, 1]", cond.t)));
            }
            if cond.identity.len() != IDENTITY_DIM {
                return Err(ModelError::Shape(format!(
                    "identity of sequence {i} has {} dims, expected {IDENTITY_DIM}",
                    cond.identity.len()
                )));
            }
            if cond.tokens.len() > c.l_max {
                return Err(ModelError::Shape(format!(
                    "{} tokens exceed l_max {}",
                    cond.tokens.len(),
                    c.l_max
                )));
            }
            if let Some(&bad) = cond.tokens.iter().find(|&&t| t as usize >= c.token_vocab) {
                return Err(ModelError::Shape(format!(
                    "token id {bad} outside vocabulary"
                )));
            }
            if !cond.identity.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFinite("identity vector".into()));
            }
        }
        Ok(())
    }

    fn linear(&self, g: &mut Graph, pv: &ParamVars, name: &str, x: Var) -> Var {
        let w = pv.get(&format!("{name}.w"));
        let b = pv.get(&format!("{name}.b"));
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask = Mat::from_shape_fn(g.shape(x), |_| {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                });
                g.mask_mul(x, mask)
            }
            _ => x,
        }
    }

    /// Conditioning vectors, one row per sequence (`B × H`).
    fn conditioning(&self, g: &mut Graph, pv: &ParamVars, conds: &[ConditioningBundle]) -> Var {
        let h = self.config.hidden_dim;
        let b = conds.len();
        let mut feats = Mat::zeros((b, h));
        let mut ident = Mat::zeros((b, IDENTITY_DIM));
        let mut keep = Mat::zeros((b, h));
        let mut dropped = Mat::zeros((b, 1));
        for (i, c) in conds.iter().enumerate() {
            for (k, v) in timestep_features(c.t, h).into_iter().enumerate() {
                feats[[i, k]] = v;
            }
            if c.drop_identity {
                dropped[[i, 0]] = 1.0;
            } else {
                keep.row_mut(i).fill(1.0);
                for (k, &v) in c.identity.iter().enumerate() {
                    ident[[i, k]] = v;
                }
            }
        }
        let feats = g.constant(feats);
        let t1 = self.linear(g, pv, "time.l1", feats);
        let t1 = g.silu(t1);
        let temb = self.linear(g, pv, "time.l2", t1);

        let ident = g.constant(ident);
        let proj = self.linear(g, pv, "ident", ident);
        let proj = g.mask_mul(proj, keep);
        let dropped = g.constant(dropped);
        let null = g.matmul(dropped, pv.get("null.identity"));
        let s = g.add(proj, null);
        g.add(temb, s)
    }

    fn modulate(&self, g: &mut Graph, x: Var, shift: Var, scale: Var) -> Var {
        let n = g.layer_norm(x, 1e-6);
        let s1 = g.shift(scale, 1.0);
        let scaled = g.mul(n, s1);
        g.add(scaled, shift)
    }

    fn self_attention(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        prefix: &str,
        a: Var,
        seq_len: usize,
        batch: usize,
    ) -> Var {
        let (heads, dh) = (self.config.heads, self.config.head_dim());
        let q = self.linear(g, pv, &format!("{prefix}.q"), a);
        let k = self.linear(g, pv, &format!("{prefix}.k"), a);
        let v = self.linear(g, pv, &format!("{prefix}.v"), a);
        let scale = pv.get(&format!("{prefix}.g"));
        let mut rows = Vec::with_capacity(batch);
        for b in 0..batch {
            let (qb, kb, vb) = (
                g.slice_rows(q, b * seq_len, seq_len),
                g.slice_rows(k, b * seq_len, seq_len),
                g.slice_rows(v, b * seq_len, seq_len),
            );
            let mut cols = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = g.slice_cols(qb, hd * dh, dh);
                let kh = g.slice_cols(kb, hd * dh, dh);
                let vh = g.slice_cols(vb, hd * dh, dh);
                let qh = g.l2_normalize_rows(qh, 1e-6);
                let kh = g.l2_normalize_rows(kh, 1e-6);
                let qh = g.rope(qh, 0.0, self.config.rope_base);
                let kh = g.rope(kh, 0.0, self.config.rope_base);
                let logits = g.matmul_bt(qh, kh);
                let logits = g.scale_by(logits, scale);
                let p = g.softmax(logits);
                cols.push(g.matmul(p, vh));
            }
            rows.push(g.concat_cols(&cols));
        }
        let out = g.concat_rows(&rows);
        self.linear(g, pv, &format!("{prefix}.o"), out)
    }

    fn cross_attention(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        prefix: &str,
        a: Var,
        seq_len: usize,
        context: &[Var],
    ) -> Var {
        let (heads, dh) = (self.config.heads, self.config.head_dim());
        let q = self.linear(g, pv, &format!("{prefix}.q"), a);
        let inv = 1.0 / (dh as f64).sqrt();
        let mut rows = Vec::with_capacity(context.len());
        for (b, &ctx) in context.iter().enumerate() {
            let qb = g.slice_rows(q, b * seq_len, seq_len);
            let k = self.linear(g, pv, &format!("{prefix}.k"), ctx);
            let v = self.linear(g, pv, &format!("{prefix}.v"), ctx);
            let mut cols = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = g.slice_cols(qb, hd * dh, dh);
                let kh = g.slice_cols(k, hd * dh, dh);
                let vh = g.slice_cols(v, hd * dh, dh);
                let logits = g.matmul_bt(qh, kh);
                let logits = g.scale(logits, inv);
                let p = g.softmax(logits);
                cols.push(g.matmul(p, vh));
            }
            rows.push(g.concat_cols(&cols));
        }
        let out = g.concat_rows(&rows);
        self.linear(g, pv, &format!("{prefix}.o"), out)
    }

    /// `gate ⊙ E[x1 − x0 | x_t]` for `x0 ~ N(mean, std²)` per dim and
    /// `x_t = (1 − t)·x0 + t·x1`:
    /// `−mean + (t − (1−t)s) / ((1−t)²s + t²) · (x_t − (1−t)·mean)`, `s = std²`.
    fn prior_velocity(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        x: Var,
        seq_len: usize,
        conds: &[ConditioningBundle],
    ) -> Var {
        let n = seq_len * conds.len();
        let d = self.config.motion_dim;
        let t: Vec<f64> = conds
            .iter()
            .flat_map(|c| std::iter::repeat_n(c.t, seq_len))
            .collect();
        let col = |f: &dyn Fn(f64) -> f64| Mat::from_shape_fn((n, 1), |(r, _)| f(t[r]));
        let one_minus = g.constant(col(&|t| 1.0 - t));
        let one_minus_sq = g.constant(col(&|t| (1.0 - t) * (1.0 - t)));
        let t_full = g.constant(Mat::from_shape_fn((n, d), |(r, _)| t[r]));
        let t_sq_full = g.constant(Mat::from_shape_fn((n, d), |(r, _)| t[r] * t[r]));
        let ones = g.constant(Mat::ones((n, 1)));

        let s = g.square(pv.get("prior.std"));
        let s = g.matmul(ones, s);
        let mean = g.matmul(ones, pv.get("prior.mean"));
        let num = g.mul_col(s, one_minus);
        let num = g.sub(t_full, num);
        let den = g.mul_col(s, one_minus_sq);
        let den = g.add(den, t_sq_full);
        let den = g.recip(den);
        let gain = g.mul(num, den);
        let shifted = g.mul_col(mean, one_minus);
        let centered = g.sub(x, shifted);
        let v = g.mul(gain, centered);
        let v = g.sub(v, mean);
        g.mul_row(v, pv.get("prior.gate"))
    }

    /// Data-dependent init of the prior baseline: per-dim mean and standard
    /// deviation (floored at `min_std`) of normalized training frames, and
    /// the gate opened to 1. Without this call the gate stays closed and a
    /// fresh model outputs exactly zero.
    pub fn fit_prior<'a>(
        &mut self,
        frames: impl IntoIterator<Item = &'a Mat>,
        min_std: f64,
    ) -> Result<(), ModelError> {
        let d = self.config.motion_dim;
        let (mut sum, mut sq, mut n) = (vec![0.0; d], vec![0.0; d], 0usize);
        for f in frames {
            if f.ncols() != d {
                return Err(ModelError::Shape(format!(
                    "prior frames have {} dims, model {d}",
                    f.ncols()
                )));
            }
            for row in f.rows() {
                for (k, v) in row.iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(ModelError::Shape("no frames to fit the prior".into()));
        }
        let mean = self.params.get_mut("prior.mean").expect("prior.mean");
        for k in 0..d {
            mean[[0, k]] = sum[k] / n as f64;
        }
        let std = self.params.get_mut("prior.std").expect("prior.std");
        for k in 0..d {
            let m = sum[k] / n as f64;
            std[[0, k]] = (sq[k] / n as f64 - m * m).max(0.0).sqrt().max(min_std);
        }
        self.params
            .get_mut("prior.gate")
            .expect("prior.gate")
            .fill(1.0);
        Ok(())
    }

    /// Velocity for `B` stacked sequences: `x` is `B·T × motion_dim`.
    /// Passing an RNG enables dropout.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        x: Var,
        seq_len: usize,
        conds: &[ConditioningBundle],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        self.check_inputs(g.value(x), seq_len, conds)?;
        let hdim = self.config.hidden_dim;
        let batch = conds.len();

        let c = self.conditioning(g, pv, conds);
        let cs = g.silu(c);

        // token context per sequence; one gather for the whole batch
        let all_tokens: Vec<usize> = conds
            .iter()
            .filter(|c| !c.drop_text && !c.tokens.is_empty())
            .flat_map(|c| c.tokens.iter().map(|&t| t as usize))
            .collect();
        let embedded = if all_tokens.is_empty() {
            None
        } else {
            Some(g.gather(pv.get("tok.emb"), &all_tokens))
        };
        let mut context = Vec::with_capacity(batch);
        let mut offset = 0;
        for cond in conds {
            if cond.drop_text || cond.tokens.is_empty() {
                context.push(pv.get("null.text"));
            } else {
                let e = embedded.expect("tokens gathered");
                context.push(g.slice_rows(e, offset, cond.tokens.len()));
                offset += cond.tokens.len();
            }
        }

        let mut h = self.linear(g, pv, "in_proj", x);
        for l in 0..self.config.layers {
            let b = format!("blk{l}");
            let m = self.linear(g, pv, &format!("{b}.ada"), cs);
            let m = g.repeat_rows(m, seq_len);
            let chunk = |g: &mut Graph, i: usize| g.slice_cols(m, i * hdim, hdim);
            let (sh1, sc1, ga1) = (chunk(g, 0), chunk(g, 1), chunk(g, 2));
            let (sh2, sc2, ga2) = (chunk(g, 3), chunk(g, 4), chunk(g, 5));
            let (sh3, sc3, ga3) = (chunk(g, 6), chunk(g, 7), chunk(g, 8));

            let a = self.modulate(g, h, sh1, sc1);
            let o = self.self_attention(g, pv, &format!("{b}.attn"), a, seq_len, batch);
            let o = self.dropout(g, o, &mut dropout_rng);
            let o = g.mul(ga1, o);
            h = g.add(h, o);

            let a = self.modulate(g, h, sh2, sc2);
            let o = self.cross_attention(g, pv, &format!("{b}.cross"), a, seq_len, &context);
            let o = self.dropout(g, o, &mut dropout_rng);
            let o = g.mul(ga2, o);
            h = g.add(h, o);

            let a = self.modulate(g, h, sh3, sc3);
            let f = self.linear(g, pv, &format!("{b}.ffn.l1"), a);
            let f = g.gelu(f);
            let f = self.dropout(g, f, &mut dropout_rng);
            let f = self.linear(g, pv, &format!("{b}.ffn.l2"), f);
            let f = g.mul(ga3, f);
            h = g.add(h, f);
        }
        let m = self.linear(g, pv, "final.ada", cs);
        let m = g.repeat_rows(m, seq_len);
        let shift = g.slice_cols(m, 0, hdim);
        let scale = g.slice_cols(m, hdim, hdim);
        let a = self.modulate(g, h, shift, scale);
        let out = self.linear(g, pv, "head", a);
        let prior = self.prior_velocity(g, pv, x, seq_len, conds);
        let out = g.add(out, prior);
        if !g.value(out).iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("network output".into()));
        }
        Ok(out)
    }

    /// Inference forward for stacked sequences (no dropout, no gradients).
    pub fn forward_batch(
        &self,
        x: &Mat,
        seq_len: usize,
        conds: &[ConditioningBundle],
    ) -> Result<Mat, ModelError> {
        let mut g = Graph::new();
        let pv = self.register(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward_graph(&mut g, &pv, xv, seq_len, conds, None)?;
        Ok(g.value(out).clone())
    }

    /// Inference forward for a single `T × motion_dim` sequence.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        cond: &ConditioningBundle,
    ) -> Result<Array2<f64>, ModelError> {
        self.forward_batch(x, x.nrows(), std::slice::from_ref(cond))
    }

    /// Gradients of a scalar `loss` for every parameter, in store order.
    pub fn collect_grads(
        &self,
        g: &Graph,
        pv: &ParamVars,
        loss: Var,
    ) -> Result<ParamGrads, ModelError> {
        let grads = g.backward(loss);
        let mut out = Vec::with_capacity(self.params.len());
        for (i, v) in pv.vars().iter().enumerate() {
            let gm = grads.get_or_zeros(*v, self.params.values()[i].dim());
            if !gm.iter().all(|x| x.is_finite()) {
                return Err(ModelError::NonFinite(format!(
                    "gradient of {}",
                    self.params.names()[i]
                )));
            }
            out.push(gm);
        }
        Ok(out)
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm(grads: &[Mat]) -> f64 {
    grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            layers: 1,
            hidden_dim: 8,
            ffn_dim: 16,
            heads: 2,
            motion_dim: 5,
            token_vocab: 12,
            l_max: 16,
            max_frames: 16,
            dropout: 0.0,
            cond_drop_prob: 0.1,
            rope_base: 10_000.0,
            qk_scale_init: 3.0,
        }
    }

    fn random_params(model: &mut Model, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in model.params.values_mut() {
            v.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }

    fn cond(rng: &mut ChaCha8Rng, len: usize, vocab: u32) -> ConditioningBundle {
        ConditioningBundle::new(
            (0..len).map(|_| rng.random_range(0..vocab)).collect(),
            (0..IDENTITY_DIM)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            rng.random_range(0.0..1.0),
        )
    }

    #[test]
    fn desk_preset_is_valid() {
        let c = ModelConfig::desk(260, 4300);
        c.validate().unwrap();
        assert_eq!(
            (c.layers, c.hidden_dim, c.heads, c.ffn_dim),
            (2, 64, 4, 256)
        );
        let bad = ModelConfig { heads: 3, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_gates_and_head_give_zero_output() {
        let model = Model::init(ModelConfig::desk(260, 100), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let x = Mat::from_shape_fn((7, 260), |_| rng.random_range(-3.0..3.0));
            let c = cond(&mut rng, 17, 100);
            let out = model.forward(&x, &c).unwrap();
            assert_eq!(out.dim(), (7, 260));
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dropped_conditions_ignore_their_inputs() {
        let mut model = Model::init(tiny(), 3).unwrap();
        random_params(&mut model, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Mat::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));
        let a = cond(&mut rng, 4, 12).unconditional();
        let mut b = cond(&mut rng, 9, 12).unconditional();
        b.t = a.t;
        assert_eq!(
            model.forward(&x, &a).unwrap(),
            model.forward(&x, &b).unwrap()
        );
        let a_cond = ConditioningBundle {
            drop_text: false,
            drop_identity: false,
            ..a.clone()
        };
        assert_ne!(
            model.forward(&x, &a).unwrap(),
            model.forward(&x, &a_cond).unwrap()
        );
    }

    #[test]
    fn forward_is_deterministic_and_batch_consistent() {
        let mut model = Model::init(tiny(), 3).unwrap();
        random_params(&mut model, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Mat::from_shape_fn((8, 5), |_| rng.random_range(-1.0..1.0));
        let c1 = cond(&mut rng, 3, 12);
        let c2 = cond(&mut rng, 5, 12);
        let both = model
            .forward_batch(&x, 4, &[c1.clone(), c2.clone()])
            .unwrap();
        let again = model
            .forward_batch(&x, 4, &[c1.clone(), c2.clone()])
            .unwrap();
        assert_eq!(both, again);
        let first = model
            .forward(&x.slice(ndarray::s![0..4, ..]).to_owned(), &c1)
            .unwrap();
        let second = model
            .forward(&x.slice(ndarray::s![4..8, ..]).to_owned(), &c2)
            .unwrap();
        let diff = (&both.slice(ndarray::s![0..4, ..]) - &first)
            .mapv(f64::abs)
            .sum()
            + (&both.slice(ndarray::s![4..8, ..]) - &second)
                .mapv(f64::abs)
                .sum();
        assert!(diff < 1e-12);
    }

    #[test]
    fn rope_logits_depend_on_offsets_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = Mat::from_shape_fn((2, 8), |_| rng.random_range(-1.0..1.0));
        let k = Mat::from_shape_fn((2, 8), |_| rng.random_range(-1.0..1.0));
        let logits = |offset: f64| {
            let mut g = Graph::new();
            let (qv, kv) = (g.constant(q.clone()), g.constant(k.clone()));
            let (qr, kr) = (g.rope(qv, offset, 10_000.0), g.rope(kv, offset, 10_000.0));
            let l = g.matmul_bt(qr, kr);
            g.value(l).clone()
        };
        let (a, b) = (logits(0.0), logits(37.0));
        assert!((&a - &b).mapv(f64::abs).sum() < 1e-12);
    }

    #[test]
    fn attention_logits_are_bounded_by_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Mat::from_shape_fn((5, 8), |_| rng.random_range(-1e6..1e6));
        let mut g = Graph::new();
        let qv = g.constant(q);
        let n = g.l2_normalize_rows(qv, 1e-6);
        let r = g.rope(n, 0.0, 10_000.0);
        let l = g.matmul_bt(r, r);
        let s = g.constant(Mat::from_elem((1, 1), 4.0));
        let l = g.scale_by(l, s);
        assert!(g.value(l).iter().all(|v| v.abs() <= 4.0 + 1e-9));
    }

    #[test]
    fn gradients_at_init() {
        let model = Model::init(tiny(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Mat::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
        let c = cond(&mut rng, 3, 12);

        let mut g = Graph::new();
        let pv = model.register(&mut g, true);
        let xv = g.constant(x.clone());
        let out = model
            .forward_graph(&mut g, &pv, xv, 4, std::slice::from_ref(&c), None)
            .unwrap();
        let sq = g.square(out);
        let loss = g.sum(sq);
        let grads = model.collect_grads(&g, &pv, loss).unwrap();
        assert!(grads.iter().all(|m| m.iter().all(|&v| v == 0.0)));

        let mut g = Graph::new();
        let pv = model.register(&mut g, true);
        let xv = g.constant(x);
        let out = model
            .forward_graph(&mut g, &pv, xv, 4, std::slice::from_ref(&c), None)
            .unwrap();
        let loss = g.sum(out);
        let grads = model.collect_grads(&g, &pv, loss).unwrap();
        for (name, gm) in model.params.names().iter().zip(&grads) {
            let nonzero = gm.iter().any(|&v| v != 0.0);
            assert_eq!(
                nonzero,
                name.starts_with("head.") || name == "prior.gate",
                "{name}"
            );
        }
    }

    #[test]
    fn finite_difference_on_random_model() {
        let mut model = Model::init(tiny(), 1).unwrap();
        random_params(&mut model, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Mat::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));
        let mut c2 = cond(&mut rng, 4, 12);
        c2.drop_identity = true;
        let conds = vec![cond(&mut rng, 3, 12), c2];
        let w = Mat::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));
        let loss_of = |m: &Model| {
            let out = m.forward_batch(&x, 3, &conds).unwrap();
            (&out * &w).sum()
        };
        let mut g = Graph::new();
        let pv = model.register(&mut g, true);
        let xv = g.constant(x.clone());
        let out = model
            .forward_graph(&mut g, &pv, xv, 3, &conds, None)
            .unwrap();
        let wv = g.constant(w.clone());
        let prod = g.mul(out, wv);
        let loss = g.sum(prod);
        let grads = model.collect_grads(&g, &pv, loss).unwrap();
        // doubling the loss doubles every gradient
        let l2 = g.scale(loss, 2.0);
        let grads2 = model.collect_grads(&g, &pv, l2).unwrap();
        for (a, b) in grads.iter().zip(&grads2) {
            assert!((a * 2.0 - b).mapv(f64::abs).sum() < 1e-12);
        }

        let h = 1e-6;
        for _ in 0..64 {
            let pi = rng.random_range(0..model.params.len());
            let (rows, cols) = model.params.values()[pi].dim();
            let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
            let mut plus = model.clone();
            plus.params.values_mut()[pi][[r, c]] += h;
            let mut minus = model.clone();
            minus.params.values_mut()[pi][[r, c]] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = grads[pi][[r, c]];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(
                rel < 1e-3,
                "{} [{r},{c}]: {a} vs {fd}",
                model.params.names()[pi]
            );
        }
    }

    #[test]
    fn input_checks() {
        let model = Model::init(tiny(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = cond(&mut rng, 3, 12);
        assert!(matches!(
            model.forward(&Mat::zeros((4, 6)), &c),
            Err(ModelError::Shape(_))
        ));
        let mut x = Mat::zeros((4, 5));
        x[[0, 0]] = f64::NAN;
        assert!(matches!(
            model.forward(&x, &c),
            Err(ModelError::NonFinite(_))
        ));
        let bad = ConditioningBundle {
            tokens: vec![99],
            ..c
        };
        assert!(model.forward(&Mat::zeros((4, 5)), &bad).is_err());
    }
}
