use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{block_backward, block_forward, xavier, AttentionConfig, AttentionError, AttentionParams, BlockCache};
use crate::corpus::Label;

const CHECKPOINT_MAGIC: &str = "hsd-encoder v1";

/// A padded token sequence; `mask[i]` is true for real tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub label: Label,
}

/// Truncates to `n_max` and pads with `pad_id`, returning ids and mask.
pub fn pad_sequence(ids: &[usize], n_max: usize, pad_id: usize) -> (Vec<usize>, Vec<bool>) {
    let real = ids.len().min(n_max);
    let mut out = ids[..real].to_vec();
    out.resize(n_max, pad_id);
    let mask = (0..n_max).map(|i| i < real).collect();
    (out, mask)
}

/// Embedding table, a compressed attention block, a dense attention block
/// and a two-way linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: AttentionConfig,
    /// vocab × d_model
    pub embedding: Array2<f64>,
    pub compressed: AttentionParams,
    pub dense: AttentionParams,
    /// d_model × 2
    pub head_weight: Array2<f64>,
    /// 1 × 2
    pub head_bias: Array2<f64>,
}

struct ForwardCache {
    ids: Vec<usize>,
    pooled: Array1<f64>,
    first: BlockCache,
    second: BlockCache,
    len: usize,
}

impl EncoderParams {
    pub fn zeros(config: AttentionConfig, vocab: usize) -> Self {
        EncoderParams {
            config,
            embedding: Array2::zeros((vocab, config.d_model)),
            compressed: AttentionParams::zeros(&config, true),
            dense: AttentionParams::zeros(&config, false),
            head_weight: Array2::zeros((config.d_model, 2)),
            head_bias: Array2::zeros((1, 2)),
        }
    }

    pub fn seeded(config: AttentionConfig, vocab: usize, seed: u64) -> Result<Self, AttentionError> {
        config.validate()?;
        if vocab == 0 {
            return Err(AttentionError::Config("vocabulary is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = xavier(&mut rng, vocab, config.d_model);
        let compressed = AttentionParams::random(&config, true, &mut rng);
        let dense = AttentionParams::random(&config, false, &mut rng);
        let head_weight = xavier(&mut rng, config.d_model, 2);
        Ok(EncoderParams {
            config,
            embedding,
            compressed,
            dense,
            head_weight,
            head_bias: Array2::zeros((1, 2)),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config, self.vocab_size())
    }

    fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (block, params) in [("compressed", &self.compressed), ("dense", &self.dense)] {
            out.extend(block_names(block, params).into_iter().zip(params.tensors()));
        }
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.compressed.tensors_mut());
        out.extend(self.dense.tensors_mut());
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameters in declared order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), AttentionError> {
        if values.len() != self.parameter_count() {
            return Err(AttentionError::Shape(format!(
                "expected {} values, got {}",
                self.parameter_count(),
                values.len()
            )));
        }
        let mut rest = values;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.iter_mut().zip(head).for_each(|(d, &s)| *d = s);
            rest = tail;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Text checkpoint: a config header, then each tensor as a name/shape
    /// line followed by one line per row.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let c = &self.config;
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(
            w,
            "config heads={} d_k={} d_v={} d_model={} n_max={} k={} vocab={}",
            c.heads,
            c.d_k,
            c.d_v,
            c.d_model,
            c.n_max,
            c.projection_dim,
            self.vocab_size()
        )?;
        for (name, t) in self.named_tensors() {
            writeln!(w, "tensor {name} {} {}", t.nrows(), t.ncols())?;
            for row in t.axis_iter(Axis(0)) {
                let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(reader: R) -> Result<Self, AttentionError> {
        let bad = |m: String| AttentionError::Checkpoint(m);
        let mut lines = reader.lines();
        let mut next = || -> Result<String, AttentionError> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file".into()))?
                .map_err(|e| bad(e.to_string()))
        };
        if next()?.trim() != CHECKPOINT_MAGIC {
            return Err(bad("missing header".into()));
        }
        let header = next()?;
        let mut fields = std::collections::HashMap::new();
        for part in header.split_whitespace().skip(1) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("bad config field `{part}`")))?;
            let v: usize = v.parse().map_err(|_| bad(format!("bad config value `{part}`")))?;
            fields.insert(k.to_string(), v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("config lacks `{k}`")));
        let config = AttentionConfig {
            heads: get("heads")?,
            d_k: get("d_k")?,
            d_v: get("d_v")?,
            d_model: get("d_model")?,
            n_max: get("n_max")?,
            projection_dim: get("k")?,
        };
        config.validate()?;
        let mut params = EncoderParams::zeros(config, get("vocab")?);
        let names: Vec<(String, (usize, usize))> =
            params.named_tensors().into_iter().map(|(n, t)| (n, t.dim())).collect();
        for ((name, (rows, cols)), tensor) in names.into_iter().zip(params.tensors_mut()) {
            let line = next()?;
            let expected = format!("tensor {name} {rows} {cols}");
            if line.trim() != expected {
                return Err(bad(format!("expected `{expected}`, found `{}`", line.trim())));
            }
            for r in 0..rows {
                let line = next()?;
                let values: Vec<f64> = line
                    .split_whitespace()
                    .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}` in {name}"))))
                    .collect::<Result<_, _>>()?;
                if values.len() != cols {
                    return Err(bad(format!(
                        "{name} row {r} has {} values, expected {cols}",
                        values.len()
                    )));
                }
                tensor.row_mut(r).iter_mut().zip(values).for_each(|(d, s)| *d = s);
            }
        }
        Ok(params)
    }
}

fn block_names(block: &str, params: &AttentionParams) -> Vec<String> {
    let mut out = Vec::new();
    for h in 0..params.heads.len() {
        for m in ["query", "key", "value"] {
            out.push(format!("{block}.head{h}.{m}"));
        }
    }
    out.push(format!("{block}.output"));
    if params.projection.is_some() {
        out.push(format!("{block}.projection"));
    }
    out
}

fn forward_cached(
    ids: &[usize],
    mask: &[bool],
    params: &EncoderParams,
) -> Result<([f64; 2], ForwardCache), AttentionError> {
    if ids.len() != mask.len() {
        return Err(AttentionError::Shape(format!(
            "{} ids but {} mask entries",
            ids.len(),
            mask.len()
        )));
    }
    if ids.len() > params.config.n_max {
        return Err(AttentionError::TooLong {
            len: ids.len(),
            n_max: params.config.n_max,
        });
    }
    let positions: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    if positions.is_empty() {
        return Err(AttentionError::EmptySequence);
    }
    let real: Vec<usize> = positions.iter().map(|&p| ids[p]).collect();
    let vocab = params.vocab_size();
    if let Some(&id) = real.iter().find(|&&id| id >= vocab) {
        return Err(AttentionError::UnknownToken { id, vocab });
    }
    // Padding positions are dropped before any computation.
    let x0 = params.embedding.select(Axis(0), &real);
    let (o1, first) = block_forward(&x0.view(), &params.compressed, Some(&positions))?;
    let x1 = &x0 + &o1;
    let (o2, second) = block_forward(&x1.view(), &params.dense, None)?;
    let x2 = &x1 + &o2;
    let pooled = x2.mean_axis(Axis(0)).expect("non-empty sequence");
    let z = pooled.dot(&params.head_weight);
    let logits = [z[0] + params.head_bias[[0, 0]], z[1] + params.head_bias[[0, 1]]];
    Ok((
        logits,
        ForwardCache {
            ids: real,
            pooled,
            first,
            second,
            len: positions.len(),
        },
    ))
}

/// Two class logits, indexed by `Label::index`.
pub fn encoder_forward(ids: &[usize], mask: &[bool], params: &EncoderParams) -> Result<[f64; 2], AttentionError> {
    forward_cached(ids, mask, params).map(|(l, _)| l)
}

fn log_softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    [logits[0] - lse, logits[1] - lse]
}

/// Class probabilities from logits.
pub fn probabilities(logits: [f64; 2]) -> [f64; 2] {
    let l = log_softmax(logits);
    [l[0].exp(), l[1].exp()]
}

fn example_grad(example: &Example, params: &EncoderParams) -> Result<(f64, EncoderParams), AttentionError> {
    let (logits, cache) = forward_cached(&example.ids, &example.mask, params)?;
    let target = example.label.index();
    let logp = log_softmax(logits);
    let loss = -logp[target];
    let mut d_logits = Array1::from_vec(vec![logp[0].exp(), logp[1].exp()]);
    d_logits[target] -= 1.0;

    let mut g = params.zeros_like();
    g.head_bias.row_mut(0).assign(&d_logits);
    g.head_weight = cache
        .pooled
        .view()
        .insert_axis(Axis(1))
        .dot(&d_logits.view().insert_axis(Axis(0)));
    let d_pooled = params.head_weight.dot(&d_logits) / cache.len as f64;
    let d_x2 = d_pooled
        .broadcast((cache.len, params.config.d_model))
        .expect("broadcast")
        .to_owned();
    let d_x1 = &d_x2 + &block_backward(&cache.second, &d_x2, &params.dense, &mut g.dense);
    let d_x0 = &d_x1 + &block_backward(&cache.first, &d_x1, &params.compressed, &mut g.compressed);
    for (row, &id) in cache.ids.iter().enumerate() {
        let mut target = g.embedding.row_mut(id);
        target += &d_x0.row(row);
    }
    Ok((loss, g))
}

/// Mean cross-entropy over the batch and its exact gradient.
pub fn encoder_grad(batch: &[Example], params: &EncoderParams) -> Result<(f64, EncoderParams), AttentionError> {
    if batch.is_empty() {
        return Err(AttentionError::EmptyBatch);
    }
    let parts: Vec<(f64, EncoderParams)> = batch
        .par_iter()
        .map(|ex| example_grad(ex, params))
        .collect::<Result<_, _>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    // Summed in batch order so the result does not depend on scheduling.
    for (l, g) in &parts {
        loss += l;
        for (t, s) in total.tensors_mut().into_iter().zip(g.tensors()) {
            *t += s;
        }
    }
    for t in total.tensors_mut() {
        *t *= scale;
    }
    Ok((loss * scale, total))
}
