//! Cross-lingual corpus standardisation: every corpus is translated into
//! each of the other two languages and merged with the native corpus of
//! that language, and the three merged corpora are concatenated into a
//! joint corpus.

mod glossary;
mod provider;

pub use glossary::{Glossary, GlossaryEntry};
pub use provider::{CachedProvider, HttpSettings, HttpTranslator, MockTranslator, PhraseTable, TranslationProvider};

use std::collections::HashSet;
use std::fmt::Display;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Language, Tweet};

#[derive(Debug, Error)]
pub enum TranslationError {
    #[error("provider error: {message}")]
    Provider { message: String, retryable: bool },
    #[error("no translation available from {from} to {to}")]
    UnsupportedPair { from: Language, to: Language },
    #[error("API key variable `{0}` is not set")]
    MissingKey(String),
    #[error("provider returned empty text for tweet {tweet_id}")]
    EmptyOutput { tweet_id: String },
    #[error("translating tweet {tweet_id} failed: {source}")]
    Tweet {
        tweet_id: String,
        #[source]
        source: Box<TranslationError>,
    },
    #[error("translation stopped after {completed} of {total} requests; {} failed, first: {}", failures.len(), failures.first().map(|f| f.0.as_str()).unwrap_or("-"))]
    Incomplete {
        completed: usize,
        total: usize,
        /// (tweet id, message)
        failures: Vec<(String, String)>,
    },
    #[error("tweet {tweet_id} is {found}, expected {expected}")]
    InputLanguage {
        tweet_id: String,
        expected: Language,
        found: Language,
    },
    #[error("tweet {0} has no label")]
    Unlabeled(String),
    #[error("tweet id {0} occurs in more than one input corpus")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl TranslationError {
    pub(crate) fn provider(message: impl Into<String>, retryable: bool) -> Self {
        TranslationError::Provider {
            message: message.into(),
            retryable,
        }
    }

    pub(crate) fn format(line: usize, message: impl Display) -> Self {
        TranslationError::Format {
            line,
            message: message.to_string(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        match self {
            TranslationError::Provider { retryable, .. } => *retryable,
            TranslationError::Tweet { source, .. } => source.is_retryable(),
            TranslationError::Incomplete { .. } => true,
            _ => false,
        }
    }
}

/// Splits on whitespace. URLs and mentions contain no whitespace, so they
/// come out as single segments.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossaryHit {
    pub term: String,
    pub required: String,
    /// What the provider produced for the term on its own.
    pub provider_rendering: Option<String>,
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatedTweet {
    pub original: Tweet,
    pub target_language: Language,
    pub translated_text: String,
    pub provider: String,
    pub glossary_hits: Vec<GlossaryHit>,
    pub validated: bool,
}

fn wrap(tweet: &Tweet) -> impl Fn(TranslationError) -> TranslationError + '_ {
    move |e| TranslationError::Tweet {
        tweet_id: tweet.id.clone(),
        source: Box::new(e),
    }
}

/// Translates one tweet, then applies glossary overrides: when a glossary
/// term occurs in the source and its required rendering is missing from the
/// output, the provider's own rendering of the term is replaced by it.
pub fn translate_tweet<P: TranslationProvider + ?Sized>(
    tweet: &Tweet,
    target: Language,
    provider: &P,
    glossary: &Glossary,
) -> Result<TranslatedTweet, TranslationError> {
    let source = tweet.language;
    if source == target {
        return Ok(TranslatedTweet {
            original: tweet.clone(),
            target_language: target,
            translated_text: tweet.text.clone(),
            provider: provider.id().to_string(),
            glossary_hits: Vec::new(),
            validated: true,
        });
    }
    let mut text = provider.translate(&tweet.text, source, target).map_err(wrap(tweet))?;
    if text.trim().is_empty() {
        return Err(TranslationError::EmptyOutput {
            tweet_id: tweet.id.clone(),
        });
    }
    let mut hits = Vec::new();
    for (entry, occurrences) in glossary.matches(&tweet.text, source, target) {
        if glossary::contains_ci(&text, &entry.rendering) {
            hits.push(GlossaryHit {
                term: entry.term.clone(),
                required: entry.rendering.clone(),
                provider_rendering: None,
                overridden: false,
            });
            continue;
        }
        let rendering = provider.translate(&entry.term, source, target).map_err(wrap(tweet))?;
        let rendering = rendering.trim().to_string();
        let mut overridden = false;
        if !rendering.is_empty() {
            if let Some(replaced) = glossary::replace_ci(&text, &rendering, &entry.rendering, occurrences) {
                text = replaced;
                overridden = true;
            }
        }
        hits.push(GlossaryHit {
            term: entry.term.clone(),
            required: entry.rendering.clone(),
            provider_rendering: Some(rendering),
            overridden,
        });
    }
    let validated = glossary.violations(&tweet.text, &text, source, target).is_empty();
    Ok(TranslatedTweet {
        original: tweet.clone(),
        target_language: target,
        translated_text: text,
        provider: provider.id().to_string(),
        glossary_hits: hits,
        validated,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationFlag {
    pub tweet_id: String,
    pub target: Language,
    pub term: String,
    pub required: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checked: usize,
    pub flags: Vec<ValidationFlag>,
}

impl ValidationReport {
    pub fn validated(&self) -> usize {
        let flagged: HashSet<(&str, Language)> = self.flags.iter().map(|f| (f.tweet_id.as_str(), f.target)).collect();
        self.checked - flagged.len()
    }
}

/// Flags every pair whose source holds a glossary term whose required
/// rendering is absent from the translation, and updates `validated`.
pub fn validate_translations(pairs: &mut [TranslatedTweet], glossary: &Glossary) -> ValidationReport {
    let mut report = ValidationReport {
        checked: pairs.len(),
        flags: Vec::new(),
    };
    for pair in pairs.iter_mut() {
        let source = pair.original.language;
        let missing = if source == pair.target_language {
            Vec::new()
        } else {
            glossary.violations(&pair.original.text, &pair.translated_text, source, pair.target_language)
        };
        pair.validated = missing.is_empty();
        report.flags.extend(missing.into_iter().map(|e| ValidationFlag {
            tweet_id: pair.original.id.clone(),
            target: pair.target_language,
            term: e.term.clone(),
            required: e.rendering.clone(),
        }));
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedCorpora {
    pub combined_english: Corpus,
    pub combined_urdu: Corpus,
    pub combined_spanish: Corpus,
    pub joint: Corpus,
    /// Every machine translation made, in assembly order.
    pub translations: Vec<TranslatedTweet>,
}

impl UnifiedCorpora {
    pub fn combined(&self, language: Language) -> &Corpus {
        match language {
            Language::English => &self.combined_english,
            Language::Urdu => &self.combined_urdu,
            Language::Spanish => &self.combined_spanish,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    /// Concurrent provider requests.
    pub parallelism: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { parallelism: 4 }
    }
}

/// Id of a translated tweet inside a combined corpus.
pub fn translated_id(id: &str, target: Language) -> String {
    format!("{id}>{}", target.code())
}

/// Id of a tweet inside the joint corpus, tagged with its pipeline.
pub fn joint_id(id: &str, pipeline: Language) -> String {
    format!("{id}@{}", pipeline.code())
}

fn check_input(corpus: &Corpus, language: Language, seen: &mut HashSet<String>) -> Result<(), TranslationError> {
    for t in corpus.iter() {
        if t.language != language {
            return Err(TranslationError::InputLanguage {
                tweet_id: t.id.clone(),
                expected: language,
                found: t.language,
            });
        }
        if t.label.is_none() {
            return Err(TranslationError::Unlabeled(t.id.clone()));
        }
        if !seen.insert(t.id.clone()) {
            return Err(TranslationError::DuplicateId(t.id.clone()));
        }
    }
    Ok(())
}

/// Runs every cross-language translation the unified corpora need, in
/// target order English, Urdu, Spanish and input order within a target.
///
/// Requests run concurrently; results follow input order, so they do not
/// depend on scheduling. If any request fails, the error lists every
/// failure; with a [`CachedProvider`] a rerun only repeats the failed
/// requests.
pub fn translate_corpora<P: TranslationProvider + ?Sized>(
    d_english: &Corpus,
    d_urdu: &Corpus,
    d_spanish: &Corpus,
    provider: &P,
    glossary: &Glossary,
    options: BuildOptions,
) -> Result<Vec<TranslatedTweet>, TranslationError> {
    let inputs = [
        (Language::English, d_english),
        (Language::Urdu, d_urdu),
        (Language::Spanish, d_spanish),
    ];
    let mut seen = HashSet::new();
    for (lang, corpus) in inputs {
        check_input(corpus, lang, &mut seen)?;
    }

    let mut jobs: Vec<(&Tweet, Language)> = Vec::new();
    for target in Language::ALL {
        for (lang, corpus) in inputs {
            if lang != target {
                jobs.extend(corpus.iter().map(|t| (t, target)));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .map_err(|e| TranslationError::Pool(e.to_string()))?;
    let results: Vec<Result<TranslatedTweet, TranslationError>> = pool.install(|| {
        jobs.par_iter()
            .map(|(tweet, target)| translate_tweet(tweet, *target, provider, glossary))
            .collect()
    });
    let failures: Vec<(String, String)> = jobs
        .iter()
        .zip(&results)
        .filter_map(|((t, _), r)| r.as_ref().err().map(|e| (t.id.clone(), e.to_string())))
        .collect();
    if !failures.is_empty() {
        return Err(TranslationError::Incomplete {
            completed: results.len() - failures.len(),
            total: results.len(),
            failures,
        });
    }
    Ok(results.into_iter().map(|r| r.expect("checked above")).collect())
}

/// Merges native tweets with their translations: one combined corpus per
/// language (native tweets first, then translations from the other two
/// languages in English, Urdu, Spanish order) and their concatenation.
pub fn align_corpora(
    d_english: &Corpus,
    d_urdu: &Corpus,
    d_spanish: &Corpus,
    translations: Vec<TranslatedTweet>,
) -> Result<UnifiedCorpora, TranslationError> {
    let inputs = [
        (Language::English, d_english),
        (Language::Urdu, d_urdu),
        (Language::Spanish, d_spanish),
    ];
    let mut seen = HashSet::new();
    for (lang, corpus) in inputs {
        check_input(corpus, lang, &mut seen)?;
    }
    let mut combined = Vec::with_capacity(3);
    let mut joint = Vec::new();
    for target in Language::ALL {
        let native = inputs
            .iter()
            .find(|(l, _)| *l == target)
            .map(|(_, c)| *c)
            .expect("all languages present");
        let mut tweets: Vec<Tweet> = native.tweets.clone();
        for source in Language::ALL {
            tweets.extend(
                translations
                    .iter()
                    .filter(|t| t.target_language == target && t.original.language == source && source != target)
                    .map(|t| {
                        Tweet::new(
                            translated_id(&t.original.id, target),
                            t.translated_text.clone(),
                            target,
                            t.original.label,
                        )
                    }),
            );
        }
        joint.extend(tweets.iter().map(|t| Tweet {
            id: joint_id(&t.id, target),
            ..t.clone()
        }));
        combined.push(Corpus::new(tweets, format!("combined-{}", target.code()))?);
    }
    let mut combined = combined.into_iter();
    Ok(UnifiedCorpora {
        combined_english: combined.next().expect("english"),
        combined_urdu: combined.next().expect("urdu"),
        combined_spanish: combined.next().expect("spanish"),
        joint: Corpus::new(joint, "joint")?,
        translations,
    })
}

/// [`translate_corpora`] followed by [`align_corpora`].
pub fn build_unified_corpora<P: TranslationProvider + ?Sized>(
    d_english: &Corpus,
    d_urdu: &Corpus,
    d_spanish: &Corpus,
    provider: &P,
    glossary: &Glossary,
    options: BuildOptions,
) -> Result<UnifiedCorpora, TranslationError> {
    let translations = translate_corpora(d_english, d_urdu, d_spanish, provider, glossary, options)?;
    align_corpora(d_english, d_urdu, d_spanish, translations)
}
