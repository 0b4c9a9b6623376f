pub mod annotation;
pub mod attention;
pub mod classifiers;
pub mod corpus;
pub mod eval;
pub mod features;
pub mod preprocess;
pub mod toy;
pub mod translation;

pub use classifiers::Prediction;
pub use corpus::{Corpus, Label, Language, Tweet};
pub use eval::{ConfusionMatrix, MetricsReport};
