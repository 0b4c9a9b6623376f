//! Scaled dot-product attention, multi-head attention with an output
//! projection, and low-rank (Linformer-style) key/value compression, plus a
//! small encoder classifier built from them.
//!
//! Low-rank compression uses `K' = Eᵀ K`, `V' = Eᵀ V` with `E` of shape
//! `n × k`, so each head attends over `k` compressed positions instead of
//! `n` tokens.

mod encoder;

pub use encoder::{encoder_forward, encoder_grad, pad_sequence, probabilities, EncoderParams, Example};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input contains NaN")]
    NaN,
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty batch")]
    EmptyBatch,
    #[error("sequence of length {len} exceeds n_max = {n_max}")]
    TooLong { len: usize, n_max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    UnknownToken { id: usize, vocab: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Fraction of the sequence cap kept as the compressed length.
pub const PROJECTION_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_model: usize,
    pub n_max: usize,
    pub projection_dim: usize,
}

pub fn projection_dim_for(n_max: usize) -> usize {
    ((PROJECTION_FRACTION * n_max as f64).ceil() as usize).max(1)
}

impl AttentionConfig {
    /// 12 heads of width 64 over a 768-wide model.
    pub fn standard(n_max: usize) -> Self {
        AttentionConfig {
            heads: 12,
            d_k: 64,
            d_v: 64,
            d_model: 768,
            n_max,
            projection_dim: projection_dim_for(n_max),
        }
    }

    /// Same head layout rule (heads × d_v = d_model) at a smaller width.
    pub fn scaled(heads: usize, head_dim: usize, n_max: usize) -> Self {
        AttentionConfig {
            heads,
            d_k: head_dim,
            d_v: head_dim,
            d_model: heads * head_dim,
            n_max,
            projection_dim: projection_dim_for(n_max),
        }
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        let bad = |m: &str| Err(AttentionError::Config(m.to_string()));
        if self.heads == 0 || self.d_k == 0 || self.d_v == 0 || self.d_model == 0 {
            return bad("heads, d_k, d_v and d_model must be positive");
        }
        if self.n_max == 0 {
            return bad("n_max must be positive");
        }
        if self.projection_dim == 0 || self.projection_dim > self.n_max {
            return bad("projection dim must lie in [1, n_max]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// d_model × d_k
    pub query: Array2<f64>,
    /// d_model × d_k
    pub key: Array2<f64>,
    /// d_model × d_v
    pub value: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    /// (heads · d_v) × d_model
    pub output: Array2<f64>,
    /// n_max × k; present only for the compressed block.
    pub projection: Option<Array2<f64>>,
}

pub(crate) fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

impl AttentionParams {
    pub fn zeros(config: &AttentionConfig, with_projection: bool) -> Self {
        AttentionParams {
            heads: (0..config.heads)
                .map(|_| HeadParams {
                    query: Array2::zeros((config.d_model, config.d_k)),
                    key: Array2::zeros((config.d_model, config.d_k)),
                    value: Array2::zeros((config.d_model, config.d_v)),
                })
                .collect(),
            output: Array2::zeros((config.heads * config.d_v, config.d_model)),
            projection: with_projection.then(|| Array2::zeros((config.n_max, config.projection_dim))),
        }
    }

    /// Xavier-uniform initialisation of every matrix.
    pub fn random(config: &AttentionConfig, with_projection: bool, rng: &mut ChaCha8Rng) -> Self {
        let heads = (0..config.heads)
            .map(|_| HeadParams {
                query: xavier(rng, config.d_model, config.d_k),
                key: xavier(rng, config.d_model, config.d_k),
                value: xavier(rng, config.d_model, config.d_v),
            })
            .collect();
        let output = xavier(rng, config.heads * config.d_v, config.d_model);
        let projection = with_projection.then(|| xavier(rng, config.n_max, config.projection_dim));
        AttentionParams {
            heads,
            output,
            projection,
        }
    }

    pub fn seeded(config: &AttentionConfig, with_projection: bool, seed: u64) -> Self {
        Self::random(config, with_projection, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub(crate) fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        for h in &self.heads {
            out.extend([&h.query, &h.key, &h.value]);
        }
        out.push(&self.output);
        if let Some(e) = &self.projection {
            out.push(e);
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for h in &mut self.heads {
            out.extend([&mut h.query, &mut h.key, &mut h.value]);
        }
        out.push(&mut self.output);
        if let Some(e) = &mut self.projection {
            out.push(e);
        }
        out
    }
}

/// Row-wise softmax with row-max subtraction.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

fn check_finite(m: &ArrayView2<f64>) -> Result<(), AttentionError> {
    if m.iter().any(|x| x.is_nan()) {
        Err(AttentionError::NaN)
    } else {
        Ok(())
    }
}

/// softmax(Q Kᵀ / √d_k), shape n × m.
pub fn attention_weights(q: &ArrayView2<f64>, k: &ArrayView2<f64>) -> Result<Array2<f64>, AttentionError> {
    if q.ncols() != k.ncols() {
        return Err(AttentionError::Shape(format!(
            "Q has {} columns but K has {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if q.ncols() == 0 {
        return Err(AttentionError::Shape("d_k must be positive".into()));
    }
    if k.nrows() == 0 {
        return Err(AttentionError::EmptySequence);
    }
    check_finite(q)?;
    check_finite(k)?;
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    Ok(softmax_rows(&(q.dot(&k.t()) * scale)))
}

/// softmax(Q Kᵀ / √d_k) V for Q: n × d_k, K: m × d_k, V: m × d_v.
pub fn scaled_dot_attention(
    q: &ArrayView2<f64>,
    k: &ArrayView2<f64>,
    v: &ArrayView2<f64>,
) -> Result<Array2<f64>, AttentionError> {
    if k.nrows() != v.nrows() {
        return Err(AttentionError::Shape(format!(
            "K has {} rows but V has {}",
            k.nrows(),
            v.nrows()
        )));
    }
    check_finite(v)?;
    Ok(attention_weights(q, k)?.dot(v))
}

/// Compresses keys and values along the sequence axis: K' = Eᵀ K, V' = Eᵀ V.
pub fn linformer_project(
    k: &ArrayView2<f64>,
    v: &ArrayView2<f64>,
    e: &ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>), AttentionError> {
    if e.nrows() != k.nrows() || e.nrows() != v.nrows() {
        return Err(AttentionError::Shape(format!(
            "E has {} rows but K has {} and V has {}",
            e.nrows(),
            k.nrows(),
            v.nrows()
        )));
    }
    Ok((e.t().dot(k), e.t().dot(v)))
}

/// Intermediate values kept for the backward pass.
pub(crate) struct HeadCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    k_used: Array2<f64>,
    v_used: Array2<f64>,
    weights: Array2<f64>,
}

pub(crate) struct BlockCache {
    x: Array2<f64>,
    heads: Vec<HeadCache>,
    concat: Array2<f64>,
    /// Rows of E used for this sequence (one per real token position).
    positions: Vec<usize>,
}

fn check_input(x: &ArrayView2<f64>, params: &AttentionParams) -> Result<(), AttentionError> {
    let d_model = params.output.ncols();
    if x.ncols() != d_model {
        return Err(AttentionError::Shape(format!(
            "X has {} columns, d_model is {d_model}",
            x.ncols()
        )));
    }
    if x.nrows() == 0 {
        return Err(AttentionError::EmptySequence);
    }
    check_finite(x)
}

/// Forward pass of one block. When `positions` is given the block uses the
/// compressed path with the matching rows of the projection matrix.
pub(crate) fn block_forward(
    x: &ArrayView2<f64>,
    params: &AttentionParams,
    positions: Option<&[usize]>,
) -> Result<(Array2<f64>, BlockCache), AttentionError> {
    check_input(x, params)?;
    let n = x.nrows();
    let e_sub = match (positions, &params.projection) {
        (Some(pos), Some(e)) => {
            if pos.len() != n {
                return Err(AttentionError::Shape(
                    "positions length differs from sequence length".into(),
                ));
            }
            if let Some(&p) = pos.iter().find(|&&p| p >= e.nrows()) {
                return Err(AttentionError::TooLong {
                    len: p + 1,
                    n_max: e.nrows(),
                });
            }
            Some(e.select(Axis(0), pos))
        }
        (Some(_), None) => return Err(AttentionError::Config("block has no projection matrix".into())),
        (None, _) => None,
    };

    let d_v = params.heads.first().map_or(0, |h| h.value.ncols());
    let mut concat = Array2::zeros((n, params.heads.len() * d_v));
    let mut caches = Vec::with_capacity(params.heads.len());
    for (h, head) in params.heads.iter().enumerate() {
        let q = x.dot(&head.query);
        let k = x.dot(&head.key);
        let v = x.dot(&head.value);
        let (k_used, v_used) = match &e_sub {
            Some(e) => linformer_project(&k.view(), &v.view(), &e.view())?,
            None => (k.clone(), v.clone()),
        };
        let weights = attention_weights(&q.view(), &k_used.view())?;
        let out = weights.dot(&v_used);
        concat.slice_mut(s![.., h * d_v..(h + 1) * d_v]).assign(&out);
        caches.push(HeadCache {
            q,
            k,
            v,
            k_used,
            v_used,
            weights,
        });
    }
    let output = concat.dot(&params.output);
    Ok((
        output,
        BlockCache {
            x: x.to_owned(),
            heads: caches,
            concat,
            positions: positions.map(<[usize]>::to_vec).unwrap_or_default(),
        },
    ))
}

/// Backward pass of one block: accumulates parameter gradients into `grads`
/// and returns the gradient with respect to the block input.
pub(crate) fn block_backward(
    cache: &BlockCache,
    d_out: &Array2<f64>,
    params: &AttentionParams,
    grads: &mut AttentionParams,
) -> Array2<f64> {
    let d_v = params.heads.first().map_or(0, |h| h.value.ncols());
    grads.output += &cache.concat.t().dot(d_out);
    let d_concat = d_out.dot(&params.output.t());
    let mut dx = Array2::zeros(cache.x.raw_dim());
    let e_sub = params
        .projection
        .as_ref()
        .filter(|_| !cache.positions.is_empty())
        .map(|e| e.select(Axis(0), &cache.positions));
    let mut d_e_sub = e_sub.as_ref().map(|e| Array2::<f64>::zeros(e.raw_dim()));

    for (h, (head, hc)) in params.heads.iter().zip(&cache.heads).enumerate() {
        let scale = 1.0 / (head.query.ncols() as f64).sqrt();
        let d_head = d_concat.slice(s![.., h * d_v..(h + 1) * d_v]);
        let d_weights = d_head.dot(&hc.v_used.t());
        let d_v_used = hc.weights.t().dot(&d_head);
        // softmax backward, row by row
        let mut d_scores = &hc.weights * &d_weights;
        for (mut row, w) in d_scores.axis_iter_mut(Axis(0)).zip(hc.weights.axis_iter(Axis(0))) {
            let dot = row.sum();
            row.zip_mut_with(&w, |d, &a| *d -= a * dot);
        }
        d_scores *= scale;
        let d_q = d_scores.dot(&hc.k_used);
        let d_k_used = d_scores.t().dot(&hc.q);
        let (d_k, d_v_full) = match (&e_sub, &mut d_e_sub) {
            (Some(e), Some(de)) => {
                *de += &hc.k.dot(&d_k_used.t());
                *de += &hc.v.dot(&d_v_used.t());
                (e.dot(&d_k_used), e.dot(&d_v_used))
            }
            _ => (d_k_used, d_v_used),
        };
        let g = &mut grads.heads[h];
        g.query += &cache.x.t().dot(&d_q);
        g.key += &cache.x.t().dot(&d_k);
        g.value += &cache.x.t().dot(&d_v_full);
        dx += &d_q.dot(&head.query.t());
        dx += &d_k.dot(&head.key.t());
        dx += &d_v_full.dot(&head.value.t());
    }
    if let (Some(de), Some(ge)) = (d_e_sub, grads.projection.as_mut()) {
        for (row, &p) in cache.positions.iter().enumerate() {
            let mut target = ge.row_mut(p);
            target += &de.row(row);
        }
    }
    dx
}

/// Dense multi-head attention: per-head projections, scaled dot-product
/// attention, concatenation and the output projection.
pub fn multi_head(x: &ArrayView2<f64>, params: &AttentionParams) -> Result<Array2<f64>, AttentionError> {
    block_forward(x, params, None).map(|(out, _)| out)
}

/// Multi-head attention whose keys and values are compressed by the
/// projection matrix; row i of X uses row i of E.
pub fn compressed_multi_head(x: &ArrayView2<f64>, params: &AttentionParams) -> Result<Array2<f64>, AttentionError> {
    let positions: Vec<usize> = (0..x.nrows()).collect();
    block_forward(x, params, Some(&positions)).map(|(out, _)| out)
}
