//! Co-occurrence counting and GloVe training.
//!
//! The objective is the weighted least-squares sum over every nonzero cell
//! (both orientations of each symmetric pair):
//!
//! ```text
//! J = Σ f(X_ij) (w_i · c_j + b_i + b̃_j − ln X_ij)²,   f(x) = min(1, (x / x_max)^alpha)
//! ```
//!
//! Training is AdaGrad over the nonzero cells in a seeded shuffled order.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureError, Vocabulary};

/// Symmetric word-pair counts with 1/d distance weighting. Only the upper
/// triangle (i < j) is stored; the diagonal is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub size: usize,
    pub window: usize,
    cells: BTreeMap<(usize, usize), f64>,
}

impl CooccurrenceMatrix {
    pub fn empty(size: usize, window: usize) -> Self {
        CooccurrenceMatrix {
            size,
            window,
            cells: BTreeMap::new(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.cells.get(&key).copied().unwrap_or(0.0)
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        if i == j {
            return;
        }
        let key = if i < j { (i, j) } else { (j, i) };
        *self.cells.entry(key).or_default() += value;
    }

    /// Number of stored pairs (upper triangle).
    pub fn pairs(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Every nonzero cell in both orientations, ordered by (i, j).
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<(usize, usize, f64)> = self
            .cells
            .iter()
            .flat_map(|(&(i, j), &x)| [(i, j, x), (j, i, x)])
            .filter(|&(_, _, x)| x > 0.0)
            .collect();
        out.sort_by_key(|a| (a.0, a.1));
        out
    }

    pub fn merge(&mut self, other: &CooccurrenceMatrix) {
        for (&(i, j), &x) in &other.cells {
            self.add(i, j, x);
        }
    }
}

/// Counts pairs of in-vocabulary tokens at distance d ≤ `window` within each
/// document, adding 1/d per occurrence. Pairs of identical words are skipped.
pub fn build_cooccurrence<S: AsRef<str>>(
    documents: &[Vec<S>],
    vocabulary: &Vocabulary,
    window: usize,
) -> Result<CooccurrenceMatrix, FeatureError> {
    if window == 0 {
        return Err(FeatureError::ZeroWindow);
    }
    let mut m = CooccurrenceMatrix::empty(vocabulary.len(), window);
    for doc in documents {
        let ids: Vec<Option<usize>> = doc.iter().map(|t| vocabulary.get(t.as_ref())).collect();
        for (p, a) in ids.iter().enumerate() {
            let Some(a) = *a else { continue };
            for d in 1..=window {
                match ids.get(p + d) {
                    Some(Some(b)) => m.add(a, *b, 1.0 / d as f64),
                    Some(None) => {}
                    None => break,
                }
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GloveConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub x_max: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for GloveConfig {
    fn default() -> Self {
        GloveConfig {
            dim: 50,
            epochs: 50,
            learning_rate: 0.05,
            x_max: 100.0,
            alpha: 0.75,
            seed: 0,
        }
    }
}

pub fn weight(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x < x_max {
        (x / x_max).powf(alpha)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GloveParams {
    pub word: Array2<f64>,
    pub context: Array2<f64>,
    pub word_bias: Array1<f64>,
    pub context_bias: Array1<f64>,
    pub x_max: f64,
    pub alpha: f64,
}

impl GloveParams {
    /// Vectors uniform in (-0.5, 0.5) / dim, zero biases.
    pub fn init(size: usize, dim: usize, x_max: f64, alpha: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / dim as f64;
        let mut draw = |_| (rng.random::<f64>() - 0.5) * scale;
        let word = Array2::from_shape_fn((size, dim), &mut draw);
        let context = Array2::from_shape_fn((size, dim), draw);
        GloveParams {
            word,
            context,
            word_bias: Array1::zeros(size),
            context_bias: Array1::zeros(size),
            x_max,
            alpha,
        }
    }

    pub fn dim(&self) -> usize {
        self.word.ncols()
    }

    fn residual(&self, i: usize, j: usize, x: f64) -> f64 {
        self.word.row(i).dot(&self.context.row(j)) + self.word_bias[i] + self.context_bias[j] - x.ln()
    }

    pub fn is_finite(&self) -> bool {
        self.word.iter().chain(self.context.iter()).all(|x| x.is_finite())
            && self
                .word_bias
                .iter()
                .chain(self.context_bias.iter())
                .all(|x| x.is_finite())
    }

    /// Final embedding of word i: word vector plus context vector.
    pub fn embedding(&self, i: usize) -> Array1<f64> {
        &self.word.row(i) + &self.context.row(i)
    }

    /// One line per word: the token followed by its embedding.
    pub fn write_text<W: Write>(&self, vocabulary: &Vocabulary, seed: u64, mut w: W) -> std::io::Result<()> {
        writeln!(w, "glove dim={} count={} seed={}", self.dim(), vocabulary.len(), seed)?;
        for i in 0..vocabulary.len() {
            write!(w, "{}", vocabulary.token(i))?;
            for x in self.embedding(i) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn glove_cost(x: &CooccurrenceMatrix, params: &GloveParams) -> f64 {
    x.entries()
        .into_iter()
        .map(|(i, j, xij)| {
            let r = params.residual(i, j, xij);
            weight(xij, params.x_max, params.alpha) * r * r
        })
        .sum()
}

/// Analytic gradient of [`glove_cost`], same shapes as the parameters.
pub fn glove_gradient(x: &CooccurrenceMatrix, params: &GloveParams) -> GloveParams {
    let mut g = GloveParams {
        word: Array2::zeros(params.word.raw_dim()),
        context: Array2::zeros(params.context.raw_dim()),
        word_bias: Array1::zeros(params.word_bias.len()),
        context_bias: Array1::zeros(params.context_bias.len()),
        x_max: params.x_max,
        alpha: params.alpha,
    };
    for (i, j, xij) in x.entries() {
        let common = 2.0 * weight(xij, params.x_max, params.alpha) * params.residual(i, j, xij);
        g.word.row_mut(i).scaled_add(common, &params.context.row(j));
        g.context.row_mut(j).scaled_add(common, &params.word.row(i));
        g.word_bias[i] += common;
        g.context_bias[j] += common;
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GloveTrace {
    pub initial_cost: f64,
    /// Cost after each epoch.
    pub epoch_costs: Vec<f64>,
}

impl GloveTrace {
    pub fn final_cost(&self) -> f64 {
        self.epoch_costs.last().copied().unwrap_or(self.initial_cost)
    }
}

/// AdaGrad minimisation of the GloVe objective. Accumulated squared
/// gradients start at 1. The visit order is reshuffled each epoch from a
/// stream seeded by `config.seed`, so runs are reproducible.
pub fn glove_train(x: &CooccurrenceMatrix, config: &GloveConfig) -> Result<(GloveParams, GloveTrace), FeatureError> {
    if x.is_empty() {
        return Err(FeatureError::EmptyCooccurrence);
    }
    if config.dim == 0 {
        return Err(FeatureError::ZeroDimension);
    }
    let mut params = GloveParams::init(x.size, config.dim, config.x_max, config.alpha, config.seed);
    let mut gradsq = GloveParams {
        word: Array2::ones(params.word.raw_dim()),
        context: Array2::ones(params.context.raw_dim()),
        word_bias: Array1::ones(x.size),
        context_bias: Array1::ones(x.size),
        x_max: config.x_max,
        alpha: config.alpha,
    };
    let mut entries = x.entries();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let lr = config.learning_rate;
    let initial_cost = glove_cost(x, &params);
    let mut epoch_costs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        entries.shuffle(&mut rng);
        for &(i, j, xij) in &entries {
            let common = 2.0 * weight(xij, config.x_max, config.alpha) * params.residual(i, j, xij);
            let grad_w = params.context.row(j).mapv(|c| common * c);
            let grad_c = params.word.row(i).mapv(|w| common * w);

            let mut gw = gradsq.word.row_mut(i);
            gw.zip_mut_with(&grad_w, |s, g| *s += g * g);
            let mut w_row = params.word.row_mut(i);
            ndarray::Zip::from(&mut w_row)
                .and(&grad_w)
                .and(&gw)
                .for_each(|p, g, s| *p -= lr * g / s.sqrt());

            let mut gc = gradsq.context.row_mut(j);
            gc.zip_mut_with(&grad_c, |s, g| *s += g * g);
            let mut c_row = params.context.row_mut(j);
            ndarray::Zip::from(&mut c_row)
                .and(&grad_c)
                .and(&gc)
                .for_each(|p, g, s| *p -= lr * g / s.sqrt());

            gradsq.word_bias[i] += common * common;
            params.word_bias[i] -= lr * common / gradsq.word_bias[i].sqrt();
            gradsq.context_bias[j] += common * common;
            params.context_bias[j] -= lr * common / gradsq.context_bias[j].sqrt();
        }
        let cost = glove_cost(x, &params);
        if !cost.is_finite() || !params.is_finite() {
            return Err(FeatureError::Diverged { epoch: epoch + 1, cost });
        }
        epoch_costs.push(cost);
    }
    Ok((
        params,
        GloveTrace {
            initial_cost,
            epoch_costs,
        },
    ))
}
