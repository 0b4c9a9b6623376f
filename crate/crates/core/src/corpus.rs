//! Labeled trilingual tweet corpora: CSV I/O, summary statistics and
//! stratified train/test splitting.
//!
//! The on-disk schema is a UTF-8 CSV with the header `id,text,language,label`.
//! The label column may be empty for unlabeled rows.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CSV_HEADER: [&str; 4] = ["id", "text", "language", "label"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: header must be `id,text,language,label`, found `{found}`")]
    BadHeader { path: String, found: String },
    #[error("row {row}: expected 4 columns, found {found}")]
    ColumnCount { row: usize, found: usize },
    #[error("row {row}: unknown label `{value}`")]
    UnknownLabel { row: usize, value: String },
    #[error("row {row}: unknown language `{value}`")]
    UnknownLanguage { row: usize, value: String },
    #[error("row {row}: language `{found}` does not match expected `{expected}`")]
    LanguageMismatch {
        row: usize,
        found: Language,
        expected: Language,
    },
    #[error("row {row}: duplicate id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: empty text")]
    EmptyText { row: usize },
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("tweet `{id}` has no label")]
    Unlabeled { id: String },
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    FractionOutOfRange(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    English,
    Urdu,
    Spanish,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::English, Language::Urdu, Language::Spanish];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::English => "English",
            Language::Urdu => "Urdu",
            Language::Spanish => "Spanish",
        }
    }

    /// Short code used in file names and id suffixes.
    pub fn code(self) -> &'static str {
        match self {
            Language::English => "en",
            Language::Urdu => "ur",
            Language::Spanish => "es",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseLanguageError(pub String);

impl fmt::Display for ParseLanguageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown language `{}`", self.0)
    }
}

impl std::error::Error for ParseLanguageError {}

impl FromStr for Language {
    type Err = ParseLanguageError;

    /// Case-insensitive; accepts the full name or the two-letter code.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "english" | "en" => Ok(Language::English),
            "urdu" | "ur" => Ok(Language::Urdu),
            "spanish" | "es" => Ok(Language::Spanish),
            _ => Err(ParseLanguageError(s.to_string())),
        }
    }
}

/// Binary label. Serialized as `Hateful` / `Not-Hateful`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "Hateful")]
    Hateful,
    #[serde(rename = "Not-Hateful")]
    NotHateful,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Hateful, Label::NotHateful];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hateful => "Hateful",
            Label::NotHateful => "Not-Hateful",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::Hateful => 0,
            Label::NotHateful => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::Hateful
        } else {
            Label::NotHateful
        }
    }

    /// +1 for Hateful, -1 for Not-Hateful.
    pub fn sign(self) -> f64 {
        match self {
            Label::Hateful => 1.0,
            Label::NotHateful => -1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseLabelError(pub String);

impl fmt::Display for ParseLabelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown label `{}`", self.0)
    }
}

impl std::error::Error for ParseLabelError {}

impl FromStr for Label {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "hateful" => Ok(Label::Hateful),
            "not-hateful" | "not hateful" | "nothateful" | "not_hateful" => Ok(Label::NotHateful),
            _ => Err(ParseLabelError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub text: String,
    pub language: Language,
    pub label: Option<Label>,
}

impl Tweet {
    pub fn new(id: impl Into<String>, text: impl Into<String>, language: Language, label: Option<Label>) -> Self {
        Tweet {
            id: id.into(),
            text: text.into(),
            language,
            label,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub tweets: Vec<Tweet>,
    pub provenance: String,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids and blank texts.
    pub fn new(tweets: Vec<Tweet>, provenance: impl Into<String>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, t) in tweets.iter().enumerate() {
            if t.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { row: i + 1 });
            }
            if !seen.insert(t.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    row: i + 1,
                    id: t.id.clone(),
                });
            }
        }
        Ok(Corpus {
            tweets,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tweet> {
        self.tweets.iter()
    }

    pub fn labels(&self) -> Vec<Option<Label>> {
        self.tweets.iter().map(|t| t.label).collect()
    }

    pub fn filter_language(&self, language: Language) -> Corpus {
        Corpus {
            tweets: self.tweets.iter().filter(|t| t.language == language).cloned().collect(),
            provenance: format!("{}[{}]", self.provenance, language.code()),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), CorpusError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for t in &self.tweets {
            w.write_record([
                t.id.as_str(),
                t.text.as_str(),
                t.language.as_str(),
                t.label.map(Label::as_str).unwrap_or(""),
            ])?;
        }
        w.flush().map_err(|e| CorpusError::Csv(e.into()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let file = File::create(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads a corpus from any reader. `origin` is used in error messages and
/// as the corpus provenance. Row numbers count data rows from 1.
pub fn read_corpus<R: Read>(
    reader: R,
    origin: &str,
    expected_language: Option<Language>,
) -> Result<Corpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != CSV_HEADER {
        return Err(CorpusError::BadHeader {
            path: origin.to_string(),
            found: found.join(","),
        });
    }
    let mut tweets = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CorpusError::Malformed {
            row,
            message: e.to_string(),
        })?;
        if record.len() != 4 {
            return Err(CorpusError::ColumnCount {
                row,
                found: record.len(),
            });
        }
        let id = record[0].trim().to_string();
        let text = record[1].to_string();
        if id.is_empty() {
            return Err(CorpusError::Malformed {
                row,
                message: "empty id".into(),
            });
        }
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText { row });
        }
        let language: Language = record[2].parse().map_err(|_| CorpusError::UnknownLanguage {
            row,
            value: record[2].to_string(),
        })?;
        if let Some(expected) = expected_language {
            if language != expected {
                return Err(CorpusError::LanguageMismatch {
                    row,
                    found: language,
                    expected,
                });
            }
        }
        let label = match record[3].trim() {
            "" => None,
            s => Some(s.parse::<Label>().map_err(|_| CorpusError::UnknownLabel {
                row,
                value: s.to_string(),
            })?),
        };
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { row, id });
        }
        tweets.push(Tweet {
            id,
            text,
            language,
            label,
        });
    }
    Ok(Corpus {
        tweets,
        provenance: origin.to_string(),
    })
}

pub fn load_corpus(path: &Path, expected_language: Option<Language>) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_corpus(file, &path.display().to_string(), expected_language)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub tweets: usize,
    pub hateful: usize,
    pub not_hateful: usize,
    pub unlabeled: usize,
    pub characters: usize,
    pub vocabulary: usize,
    pub avg_words: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_tweets: usize,
    pub total_characters: usize,
    pub vocabulary: usize,
    pub avg_words: f64,
    pub per_language: BTreeMap<Language, LanguageStats>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Summary counts over raw text. Characters are Unicode scalar values;
/// vocabulary is the number of distinct whitespace-delimited raw tokens.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats::default();
    let mut vocab: HashSet<&str> = HashSet::new();
    let mut lang_vocab: BTreeMap<Language, HashSet<&str>> = BTreeMap::new();
    let mut words_total = 0usize;
    let mut lang_words: BTreeMap<Language, usize> = BTreeMap::new();

    for t in &corpus.tweets {
        let entry = stats.per_language.entry(t.language).or_default();
        entry.tweets += 1;
        match t.label {
            Some(Label::Hateful) => entry.hateful += 1,
            Some(Label::NotHateful) => entry.not_hateful += 1,
            None => entry.unlabeled += 1,
        }
        let chars = t.text.chars().count();
        entry.characters += chars;
        stats.total_characters += chars;
        let lv = lang_vocab.entry(t.language).or_default();
        let mut n = 0;
        for w in t.text.split_whitespace() {
            vocab.insert(w);
            lv.insert(w);
            n += 1;
        }
        words_total += n;
        *lang_words.entry(t.language).or_default() += n;
    }
    stats.total_tweets = corpus.len();
    stats.vocabulary = vocab.len();
    stats.avg_words = if corpus.is_empty() {
        0.0
    } else {
        round2(words_total as f64 / corpus.len() as f64)
    };
    for (lang, entry) in stats.per_language.iter_mut() {
        entry.vocabulary = lang_vocab.get(lang).map_or(0, HashSet::len);
        entry.avg_words = round2(lang_words[lang] as f64 / entry.tweets as f64);
    }
    stats
}

impl CorpusStats {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>7} {:>8} {:>12} {:>11} {:>7} {:>10}\n",
            "language", "tweets", "hateful", "not-hateful", "characters", "vocab", "avg words"
        ));
        for (lang, s) in &self.per_language {
            out.push_str(&format!(
                "{:<10} {:>7} {:>8} {:>12} {:>11} {:>7} {:>10.2}\n",
                lang.as_str(),
                s.tweets,
                s.hateful,
                s.not_hateful,
                s.characters,
                s.vocabulary,
                s.avg_words
            ));
        }
        let hateful: usize = self.per_language.values().map(|s| s.hateful).sum();
        let not_hateful: usize = self.per_language.values().map(|s| s.not_hateful).sum();
        out.push_str(&format!(
            "{:<10} {:>7} {:>8} {:>12} {:>11} {:>7} {:>10.2}\n",
            "total", self.total_tweets, hateful, not_hateful, self.total_characters, self.vocabulary, self.avg_words
        ));
        out
    }
}

/// Splits a labeled corpus into train and test sets, stratified by
/// (language, label).
///
/// The global test size is `round(N * test_fraction)`. Each stratum gets
/// the floor of its exact quota and the leftover slots go to the strata with
/// the largest fractional remainders (ties broken by stratum order). Members
/// of each stratum are shuffled with a ChaCha8 stream seeded by `seed`.
/// Both outputs keep the original corpus order.
pub fn stratified_split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::FractionOutOfRange(test_fraction));
    }
    let mut strata: BTreeMap<(Language, Label), Vec<usize>> = BTreeMap::new();
    for (i, t) in corpus.tweets.iter().enumerate() {
        let label = t.label.ok_or_else(|| CorpusError::Unlabeled { id: t.id.clone() })?;
        strata.entry((t.language, label)).or_default().push(i);
    }

    let target = (corpus.len() as f64 * test_fraction).round() as usize;
    let quotas = largest_remainder(
        &strata.values().map(Vec::len).collect::<Vec<_>>(),
        test_fraction,
        target,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; corpus.len()];
    for (members, quota) in strata.values().zip(quotas) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &i in shuffled.iter().take(quota) {
            in_test[i] = true;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (t, &is_test) in corpus.tweets.iter().zip(&in_test) {
        if is_test {
            test.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }
    Ok((
        Corpus {
            tweets: train,
            provenance: format!("{}#train(seed={seed})", corpus.provenance),
        },
        Corpus {
            tweets: test,
            provenance: format!("{}#test(seed={seed})", corpus.provenance),
        },
    ))
}

/// Apportions `target` slots among groups of the given sizes by the
/// largest-remainder method. Never assigns a group more than its size.
pub(crate) fn largest_remainder(sizes: &[usize], fraction: f64, target: usize) -> Vec<usize> {
    let exact: Vec<f64> = sizes.iter().map(|&s| s as f64 * fraction).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // stable sort keeps stratum order among equal remainders
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut remaining = target.saturating_sub(assigned);
    for &i in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            remaining -= 1;
        }
    }
    quotas
}
