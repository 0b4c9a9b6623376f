//! Numeric features: TF-IDF document vectors, character n-gram word
//! vectors and GloVe embeddings.

pub mod fasttext;
pub mod glove;
mod tfidf;

pub use fasttext::{char_ngrams, fasttext_embed, NgramTable};
pub use glove::{
    build_cooccurrence, glove_cost, glove_gradient, glove_train, CooccurrenceMatrix, GloveConfig, GloveParams,
    GloveTrace,
};
pub use tfidf::{inverse_document_frequency, term_frequency, tfidf_matrix, FeatureMatrix, IdfMode, Vocabulary};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("term frequency of an empty document is undefined")]
    EmptyDocument,
    #[error("term `{0}` is not in the vocabulary")]
    UnknownTerm(String),
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("co-occurrence matrix is empty")]
    EmptyCooccurrence,
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("GloVe training diverged at epoch {epoch}: cost {cost}")]
    Diverged { epoch: usize, cost: f64 },
    #[error("row {row} has {found} columns, expected {expected}")]
    Shape { row: usize, found: usize, expected: usize },
    #[error("{context}: {message}")]
    Format { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
