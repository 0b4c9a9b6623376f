use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::attention::{
    encoder_forward, encoder_grad, pad_sequence, probabilities, AttentionConfig, EncoderParams, Example,
};
use crate::corpus::Label;
use crate::preprocess::TokenizedTweet;

const MODEL_MAGIC: &str = "hsd-attention-classifier v1";

/// Token ids for the encoder. Id 0 stands for unknown tokens and padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenIndex {
    tokens: Vec<String>,
}

impl TokenIndex {
    pub fn build(tweets: &[TokenizedTweet]) -> Self {
        let mut tokens: Vec<String> = tweets.iter().flat_map(|t| t.tokens.iter().cloned()).collect();
        tokens.sort();
        tokens.dedup();
        TokenIndex { tokens }
    }

    /// Including the unknown slot.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn id(&self, token: &str) -> usize {
        self.tokens
            .binary_search_by(|t| t.as_str().cmp(token))
            .map_or(0, |i| i + 1)
    }

    /// Truncated and padded ids with mask. An empty token list becomes a
    /// single unknown token so that every tweet can be scored.
    pub fn encode(&self, tokens: &[String], n_max: usize) -> (Vec<usize>, Vec<bool>) {
        let ids: Vec<usize> = if tokens.is_empty() {
            vec![0]
        } else {
            tokens.iter().map(|t| self.id(t)).collect()
        };
        pad_sequence(&ids, n_max, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for NeuralTrainConfig {
    fn default() -> Self {
        NeuralTrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    /// Mean loss over the training set before the first update.
    pub initial: f64,
    /// Mean loss over the training set after each epoch.
    pub epochs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionClassifier {
    pub index: TokenIndex,
    pub params: EncoderParams,
}

/// First and second moment estimates, one pair per parameter.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn examples(tweets: &[TokenizedTweet], index: &TokenIndex, n_max: usize) -> Result<Vec<Example>, ClassifierError> {
    tweets
        .iter()
        .map(|t| {
            let label = t.label.ok_or_else(|| ClassifierError::Unlabeled(t.tweet_id.clone()))?;
            let (ids, mask) = index.encode(&t.tokens, n_max);
            Ok(Example { ids, mask, label })
        })
        .collect()
}

fn mean_loss(examples: &[Example], params: &EncoderParams) -> Result<f64, ClassifierError> {
    Ok(encoder_grad(examples, params)?.0)
}

/// Mini-batch training with Adam on mean cross-entropy. Batches are drawn
/// from a seeded shuffle each epoch; with zero epochs the initial
/// parameters are returned unchanged.
pub fn attention_classifier_train(
    tweets: &[TokenizedTweet],
    config: AttentionConfig,
    hyper: &NeuralTrainConfig,
) -> Result<(AttentionClassifier, LossTrace), ClassifierError> {
    if tweets.is_empty() {
        return Err(ClassifierError::Config("no training tweets".into()));
    }
    if hyper.batch_size == 0 {
        return Err(ClassifierError::Config("batch size must be positive".into()));
    }
    let index = TokenIndex::build(tweets);
    let data = examples(tweets, &index, config.n_max)?;
    let mut params = EncoderParams::seeded(config, index.size(), hyper.seed)?;
    let mut trace = LossTrace {
        initial: mean_loss(&data, &params)?,
        epochs: Vec::with_capacity(hyper.epochs),
    };
    let mut flat = params.flat();
    let mut adam = Adam::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (_, grad) = encoder_grad(&batch, &params)?;
            adam.update(&mut flat, &grad.flat(), hyper.learning_rate);
            params.set_flat(&flat)?;
        }
        let loss = mean_loss(&data, &params)?;
        if !loss.is_finite() {
            trace.epochs.push(loss);
            return Err(ClassifierError::Diverged(format!(
                "loss {loss} after epoch {}; trace {:?}",
                epoch + 1,
                trace.epochs
            )));
        }
        trace.epochs.push(loss);
    }
    Ok((AttentionClassifier { index, params }, trace))
}

impl AttentionClassifier {
    /// Predicted label and probability of Hateful. Equal probabilities map
    /// to NotHateful.
    pub fn predict(&self, tokens: &[String]) -> Result<(Label, f64), ClassifierError> {
        let (ids, mask) = self.index.encode(tokens, self.params.config.n_max);
        let p = probabilities(encoder_forward(&ids, &mask, &self.params)?);
        let hateful = p[Label::Hateful.index()];
        let label = if hateful > p[Label::NotHateful.index()] {
            Label::Hateful
        } else {
            Label::NotHateful
        };
        Ok((label, hateful))
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MODEL_MAGIC}")?;
        writeln!(w, "tokens {}", self.index.tokens.len())?;
        for t in &self.index.tokens {
            writeln!(w, "{t}")?;
        }
        self.params.write_text(w)
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self, ClassifierError> {
        let bad = |m: &str| ClassifierError::Format(m.to_string());
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MODEL_MAGIC {
            return Err(bad("missing model header"));
        }
        line.clear();
        r.read_line(&mut line)?;
        let count: usize = line
            .trim_end()
            .strip_prefix("tokens ")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad("bad token count line"))?;
        let mut tokens = Vec::with_capacity(count);
        for _ in 0..count {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("token list ends early"));
            }
            tokens.push(line.trim_end_matches(['\n', '\r']).to_string());
        }
        if tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("token list is not sorted and unique"));
        }
        let params = EncoderParams::read_text(r)?;
        let index = TokenIndex { tokens };
        if params.vocab_size() != index.size() {
            return Err(bad("embedding rows do not match the token list"));
        }
        Ok(AttentionClassifier { index, params })
    }
}

/// Fraction of rows whose argmax matches the label.
pub fn training_accuracy(model: &AttentionClassifier, tweets: &[TokenizedTweet]) -> Result<f64, ClassifierError> {
    let mut correct = 0;
    for t in tweets {
        if Some(model.predict(&t.tokens)?.0) == t.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / tweets.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language;
    use crate::preprocess::Stage;

    fn tt(id: &str, tokens: &[&str], label: Label) -> TokenizedTweet {
        TokenizedTweet {
            tweet_id: id.into(),
            language: Language::English,
            label: Some(label),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            stage: Stage::D4,
        }
    }

    #[test]
    fn index_lookup() {
        let idx = TokenIndex::build(&[
            tt("a", &["zeta", "alpha"], Label::Hateful),
            tt("b", &["alpha"], Label::NotHateful),
        ]);
        assert_eq!(idx.size(), 3);
        assert_eq!(idx.id("alpha"), 1);
        assert_eq!(idx.id("zeta"), 2);
        assert_eq!(idx.id("nope"), 0);
        assert_eq!(idx.encode(&[], 3), (vec![0, 0, 0], vec![true, false, false]));
    }

    #[test]
    fn zero_epochs_keep_initial_params() {
        let data = [
            tt("a", &["bad", "dog"], Label::Hateful),
            tt("b", &["good", "day"], Label::NotHateful),
        ];
        let cfg = AttentionConfig::scaled(2, 2, 4);
        let hyper = NeuralTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (model, trace) = attention_classifier_train(&data, cfg, &hyper).unwrap();
        assert_eq!(
            model.params,
            EncoderParams::seeded(cfg, model.index.size(), hyper.seed).unwrap()
        );
        assert!(trace.epochs.is_empty());
    }

    #[test]
    fn model_file_round_trip() {
        let data = [
            tt("a", &["bad", "dog"], Label::Hateful),
            tt("b", &["good", "day"], Label::NotHateful),
        ];
        let hyper = NeuralTrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let (model, _) = attention_classifier_train(&data, AttentionConfig::scaled(2, 2, 4), &hyper).unwrap();
        let mut buf = Vec::new();
        model.write(&mut buf).unwrap();
        let back = AttentionClassifier::read(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }
}
