use std::fmt;

use hsd_core::annotation::{AnnotationError, StoreError};
use hsd_core::classifiers::{ClassifierError, LlmError};
use hsd_core::corpus::CorpusError;
use hsd_core::eval::EvalError;
use hsd_core::features::FeatureError;
use hsd_core::preprocess::PreprocessError;
use hsd_core::translation::TranslationError;

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// Every configuration problem found.
    Config(Vec<String>),
    Data(String),
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Provider(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Provider(_) => "provider",
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

/// Single line: `error kind=<kind> exit=<code>: <message>`.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let message = match self {
            CliError::Config(problems) if problems.len() == 1 => problems[0].clone(),
            CliError::Config(problems) => format!("{} problems: {}", problems.len(), problems.join("; ")),
            CliError::Usage(m) | CliError::Data(m) | CliError::Provider(m) => m.clone(),
        };
        let message = message.replace(['\n', '\r'], " ");
        write!(f, "error kind={} exit={}: {message}", self.kind(), self.exit_code())
    }
}

impl std::error::Error for CliError {}

macro_rules! data_error {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_error!(
    CorpusError,
    PreprocessError,
    FeatureError,
    EvalError,
    AnnotationError,
    StoreError,
    serde_json::Error
);

impl From<TranslationError> for CliError {
    fn from(e: TranslationError) -> Self {
        match e {
            TranslationError::Provider { .. }
            | TranslationError::MissingKey(_)
            | TranslationError::EmptyOutput { .. }
            | TranslationError::UnsupportedPair { .. }
            | TranslationError::Tweet { .. }
            | TranslationError::Incomplete { .. }
            | TranslationError::Pool(_) => CliError::Provider(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Script { .. } | LlmError::Template(_) | LlmError::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::Provider(e.to_string()),
        }
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::Llm(inner) => inner.into(),
            ClassifierError::Config(m) => CliError::Config(vec![m]),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_with_kind_and_code() {
        let e = CliError::Config(vec!["a missing".into(), "b bad\nvalue".into()]);
        assert_eq!(
            e.to_string(),
            "error kind=config exit=1: 2 problems: a missing; b bad value"
        );
        assert_eq!(CliError::Provider("x".into()).exit_code(), 3);
        let e: CliError = TranslationError::MissingKey("K".into()).into();
        assert_eq!(e.exit_code(), 3);
        let e: CliError = TranslationError::Unlabeled("t".into()).into();
        assert_eq!(e.exit_code(), 2);
    }
}
