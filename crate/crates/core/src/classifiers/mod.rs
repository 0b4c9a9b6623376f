//! The three classifier families and the experiment runner that trains one
//! on a split and writes its test predictions.

mod llm;
mod neural;
mod svm;

pub use llm::{
    llm_classify, llm_classify_all, parse_llm_response, select_exemplars, Exemplar, FewShotPrompt, HttpLlm, LlmConfig,
    LlmError, LlmProvider, LlmRequest, PromptTemplate, ScriptedLlm,
};
pub use neural::{
    attention_classifier_train, training_accuracy, AttentionClassifier, LossTrace, NeuralTrainConfig, TokenIndex,
};
pub use svm::{svm_objective, svm_predict, svm_train, LinearModel, SvmConfig, SvmTrace};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attention::{AttentionConfig, AttentionError};
use crate::corpus::{Corpus, Label};
use crate::features::{tfidf_matrix, IdfMode, Vocabulary};
use crate::preprocess::{preprocess_corpus, PreprocessConfig, PreprocessError, ProcessedCorpus};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training data has no {0} examples")]
    SingleClass(Label),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("tweet {0} has no label")]
    Unlabeled(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("bad file: {0}")]
    Format(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// `label` is `None` when the classifier abstained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub tweet_id: String,
    pub classifier_id: String,
    pub label: Option<Label>,
    pub score: Option<f64>,
}

pub const PREDICTION_HEADER: [&str; 4] = ["tweet_id", "classifier_id", "label", "score"];
const ABSTAIN: &str = "Abstain";

/// CSV with an `Abstain` label for abstentions and an empty score when
/// there is none.
pub fn write_predictions<W: Write>(predictions: &[Prediction], writer: W) -> Result<(), ClassifierError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PREDICTION_HEADER)?;
    for p in predictions {
        let score = p.score.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([
            p.tweet_id.as_str(),
            p.classifier_id.as_str(),
            p.label.map_or(ABSTAIN, Label::as_str),
            score.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<Prediction>, ClassifierError> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().map(str::trim).ne(PREDICTION_HEADER) {
        return Err(ClassifierError::Format(format!(
            "prediction header must be {}",
            PREDICTION_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let bad = |m: String| ClassifierError::Format(format!("prediction row {}: {m}", i + 1));
        if row.len() != 4 {
            return Err(bad("expected 4 fields".into()));
        }
        let label = match row[2].trim() {
            ABSTAIN => None,
            s => Some(s.parse::<Label>().map_err(|e| bad(e.to_string()))?),
        };
        let score = match row[3].trim() {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|e| bad(e.to_string()))?),
        };
        out.push(Prediction {
            tweet_id: row[0].to_string(),
            classifier_id: row[1].to_string(),
            label,
            score,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierSpec {
    Svm {
        svm: SvmConfig,
        idf: IdfMode,
    },
    Attention {
        encoder: AttentionConfig,
        train: NeuralTrainConfig,
    },
    Llm {
        llm: LlmConfig,
    },
}

impl ClassifierSpec {
    pub fn classifier_id(&self) -> String {
        match self {
            ClassifierSpec::Svm { .. } => "svm".into(),
            ClassifierSpec::Attention { .. } => "attention".into(),
            ClassifierSpec::Llm { llm } => format!("llm-{}", llm.model),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ClassifierSpec::Svm { svm, .. } => svm.seed,
            ClassifierSpec::Attention { train, .. } => train.seed,
            ClassifierSpec::Llm { llm } => llm.seed,
        }
    }
}

/// SHA-256 over the JSON form of the parts that determine a run.
pub fn config_hash(spec: &ClassifierSpec, extra: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("spec serializes"));
    h.update(extra.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub classifier_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub train_size: usize,
    pub test_size: usize,
    pub abstains: usize,
}

/// What was fitted, kept so callers can persist it.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Svm {
        model: LinearModel,
        vocabulary: Vocabulary,
        trace: SvmTrace,
    },
    Attention {
        model: Box<AttentionClassifier>,
        trace: LossTrace,
    },
    Llm {
        prompt: FewShotPrompt,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub predictions: Vec<Prediction>,
    pub metadata: RunMetadata,
    pub model: TrainedModel,
}

/// Raw train and test tweets, plus the preprocessing applied before the
/// trainable classifiers. The LLM classifier sees the raw text.
pub struct ExperimentData<'a> {
    pub train: &'a Corpus,
    pub test: &'a Corpus,
    pub preprocess: &'a PreprocessConfig,
}

pub struct LlmBackend<'a> {
    pub provider: &'a dyn LlmProvider,
    pub template: PromptTemplate,
}

fn labels(p: &ProcessedCorpus) -> Result<Vec<Label>, ClassifierError> {
    p.tweets
        .iter()
        .map(|t| t.label.ok_or_else(|| ClassifierError::Unlabeled(t.tweet_id.clone())))
        .collect()
}

fn ids(p: &ProcessedCorpus) -> Vec<String> {
    p.tweets.iter().map(|t| t.tweet_id.clone()).collect()
}

/// Trains on the train split (where applicable) and predicts the test split.
pub fn run_experiment(
    data: &ExperimentData<'_>,
    spec: &ClassifierSpec,
    llm: Option<&LlmBackend<'_>>,
) -> Result<ExperimentRun, ClassifierError> {
    let classifier_id = spec.classifier_id();
    let mut extra = String::new();
    let (predictions, model) = match spec {
        ClassifierSpec::Svm { svm, idf } => {
            let train = preprocess_corpus(data.train, data.preprocess)?;
            let test = preprocess_corpus(data.test, data.preprocess)?;
            let vocabulary = Vocabulary::build(&train.documents());
            let x_train = tfidf_matrix(ids(&train), &train.documents(), &vocabulary, *idf);
            let x_test = tfidf_matrix(ids(&test), &test.documents(), &vocabulary, *idf);
            let (model, trace) = svm_train(&x_train, &labels(&train)?, svm)?;
            let predictions = svm_predict(&model, &x_test)?
                .into_iter()
                .zip(&test.tweets)
                .map(|((label, score), t)| Prediction {
                    tweet_id: t.tweet_id.clone(),
                    classifier_id: classifier_id.clone(),
                    label: Some(label),
                    score: Some(score),
                })
                .collect();
            (
                predictions,
                TrainedModel::Svm {
                    model,
                    vocabulary,
                    trace,
                },
            )
        }
        ClassifierSpec::Attention { encoder, train: hyper } => {
            let train = preprocess_corpus(data.train, data.preprocess)?;
            let test = preprocess_corpus(data.test, data.preprocess)?;
            let (model, trace) = attention_classifier_train(&train.tweets, *encoder, hyper)?;
            let predictions = test
                .tweets
                .iter()
                .map(|t| {
                    let (label, score) = model.predict(&t.tokens)?;
                    Ok(Prediction {
                        tweet_id: t.tweet_id.clone(),
                        classifier_id: classifier_id.clone(),
                        label: Some(label),
                        score: Some(score),
                    })
                })
                .collect::<Result<Vec<_>, ClassifierError>>()?;
            (
                predictions,
                TrainedModel::Attention {
                    model: Box::new(model),
                    trace,
                },
            )
        }
        ClassifierSpec::Llm { llm: config } => {
            let backend = llm.ok_or_else(|| ClassifierError::Config("LLM classifier needs a provider".into()))?;
            if backend.template.id != config.template {
                return Err(ClassifierError::Config(format!(
                    "template `{}` requested but `{}` supplied",
                    config.template, backend.template.id
                )));
            }
            extra = backend.template.text.clone();
            let prompt = FewShotPrompt {
                template: backend.template.clone(),
                exemplars: select_exemplars(data.train, config.shots_per_class, config.seed),
            };
            let predictions = llm_classify_all(&data.test.tweets, config, &prompt, backend.provider)?;
            (predictions, TrainedModel::Llm { prompt })
        }
    };
    let abstains = predictions.iter().filter(|p: &&Prediction| p.label.is_none()).count();
    Ok(ExperimentRun {
        metadata: RunMetadata {
            classifier_id,
            seed: spec.seed(),
            config_hash: config_hash(spec, &extra),
            train_size: data.train.len(),
            test_size: data.test.len(),
            abstains,
        },
        predictions,
        model,
    })
}
