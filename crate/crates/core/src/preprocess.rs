//! Four-stage cleaning pipeline: clean (D1), lowercase (D2), stopword and
//! short-token removal (D3), suffix stemming (D4).

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label, Language};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("no stopword list for {0}")]
    UnknownLanguage(Language),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}, line {line}: {message}")]
    BadRule { path: String, line: usize, message: String },
    #[error("{path}, row {row}: {message}")]
    BadTokens { path: String, row: usize, message: String },
}

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S+").unwrap());

/// Emoji and pictograph blocks removed at the cleaning stage.
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF   // pictographs, emoticons, flags, supplemental symbols
        | 0x2600..=0x27BF   // misc symbols, dingbats
        | 0x2B00..=0x2BFF   // arrows and stars
        | 0x2300..=0x23FF   // misc technical (watch, hourglass)
        | 0xE0020..=0xE007F // tag characters
    )
}

/// Zero-width joiners, variation selectors and the BOM vanish without
/// leaving a word break.
fn is_invisible(c: char) -> bool {
    matches!(c as u32, 0x200B..=0x200D | 0xFE00..=0xFE0F | 0xFEFF | 0x2060)
}

/// Nonspacing marks used by Latin and Perso-Arabic script.
fn is_combining_mark(c: char) -> bool {
    matches!(c as u32,
        0x0300..=0x036F
        | 0x0610..=0x061A
        | 0x064B..=0x065F
        | 0x0670
        | 0x06D6..=0x06DC
        | 0x06DF..=0x06E4
        | 0x06E7..=0x06E8
        | 0x06EA..=0x06ED
    )
}

/// D1 + D2: strips URLs, emoji, punctuation, symbols and digits (a `#` goes,
/// the tag word stays), lowercases and collapses whitespace.
pub fn clean(text: &str) -> String {
    let without_urls = URL.replace_all(text, " ");
    let mut out = String::with_capacity(without_urls.len());
    for c in without_urls.chars() {
        if is_invisible(c) {
            continue;
        }
        if is_emoji(c) || !(c.is_alphabetic() || is_combining_mark(c)) {
            out.push(' ');
        } else {
            out.extend(c.to_lowercase());
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Default)]
pub struct StopwordTable {
    lists: BTreeMap<Language, HashSet<String>>,
}

impl StopwordTable {
    /// The lists shipped with the crate.
    pub fn bundled() -> Self {
        let mut table = StopwordTable::default();
        table.insert_list(Language::English, include_str!("../data/stopwords_en.txt"));
        table.insert_list(Language::Spanish, include_str!("../data/stopwords_es.txt"));
        table.insert_list(Language::Urdu, include_str!("../data/stopwords_ur.txt"));
        table
    }

    /// One token per line; blank lines and `#` comments are skipped.
    pub fn insert_list(&mut self, language: Language, contents: &str) {
        let set = self.lists.entry(language).or_default();
        for line in contents.lines() {
            let w = line.trim();
            if !w.is_empty() && !w.starts_with('#') {
                set.insert(w.to_lowercase());
            }
        }
    }

    pub fn load_file(&mut self, language: Language, path: &Path) -> Result<(), PreprocessError> {
        let contents = std::fs::read_to_string(path).map_err(|e| PreprocessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.insert_list(language, &contents);
        Ok(())
    }

    pub fn contains(&self, language: Language, token: &str) -> Result<bool, PreprocessError> {
        let set = self
            .lists
            .get(&language)
            .ok_or(PreprocessError::UnknownLanguage(language))?;
        Ok(set.contains(&token.to_lowercase()))
    }

    pub fn has_language(&self, language: Language) -> bool {
        self.lists.contains_key(&language)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StemRule {
    pub suffix: String,
    pub replacement: String,
    pub min_stem_len: usize,
}

impl StemRule {
    /// A rule whose replacement equals its suffix protects matching words.
    fn is_guard(&self) -> bool {
        self.suffix == self.replacement
    }
}

/// Ordered suffix rules. Stemming applies the first matching rule and
/// repeats until no rule fires, so the result is a fixpoint and stemming is
/// idempotent. Every non-guard rule must shorten the word, which bounds the
/// iteration.
#[derive(Debug, Clone, Default)]
pub struct StemRules {
    rules: BTreeMap<Language, Vec<StemRule>>,
}

/// Stemming never produces a token shorter than this.
pub const MIN_STEM_RESULT: usize = 3;

impl StemRules {
    pub fn bundled() -> Self {
        let mut r = StemRules::default();
        r.insert_csv(Language::English, include_str!("../data/stem_en.csv"), "stem_en.csv")
            .expect("bundled English rules");
        r.insert_csv(Language::Spanish, include_str!("../data/stem_es.csv"), "stem_es.csv")
            .expect("bundled Spanish rules");
        r.insert_csv(Language::Urdu, include_str!("../data/stem_ur.csv"), "stem_ur.csv")
            .expect("bundled Urdu rules");
        r
    }

    /// Parses `suffix,replacement,min_stem_len` rows (header required).
    pub fn insert_csv(&mut self, language: Language, contents: &str, origin: &str) -> Result<(), PreprocessError> {
        let bad = |line: usize, message: String| PreprocessError::BadRule {
            path: origin.to_string(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(contents.as_bytes());
        let mut rules = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| bad(line, e.to_string()))?;
            if rec.len() != 3 {
                return Err(bad(line, format!("expected 3 columns, found {}", rec.len())));
            }
            let rule = StemRule {
                suffix: rec[0].trim().to_string(),
                replacement: rec[1].trim().to_string(),
                min_stem_len: rec[2]
                    .trim()
                    .parse()
                    .map_err(|e| bad(line, format!("min_stem_len: {e}")))?,
            };
            if rule.suffix.is_empty() {
                return Err(bad(line, "empty suffix".into()));
            }
            if !rule.is_guard() && rule.replacement.chars().count() >= rule.suffix.chars().count() {
                return Err(bad(line, "replacement must be shorter than the suffix".into()));
            }
            rules.push(rule);
        }
        self.rules.insert(language, rules);
        Ok(())
    }

    pub fn load_file(&mut self, language: Language, path: &Path) -> Result<(), PreprocessError> {
        let contents = std::fs::read_to_string(path).map_err(|e| PreprocessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.insert_csv(language, &contents, &path.display().to_string())
    }

    pub fn stem_word(&self, word: &str, language: Language) -> String {
        let Some(rules) = self.rules.get(&language) else {
            return word.to_string();
        };
        let mut current = word.to_string();
        'outer: loop {
            for rule in rules {
                let Some(stem) = current.strip_suffix(rule.suffix.as_str()) else {
                    continue;
                };
                if rule.is_guard() {
                    break 'outer;
                }
                let stem_len = stem.chars().count();
                if stem_len < rule.min_stem_len || stem_len + rule.replacement.chars().count() < MIN_STEM_RESULT {
                    continue;
                }
                current = format!("{stem}{}", rule.replacement);
                continue 'outer;
            }
            break;
        }
        current
    }
}

pub fn stem(tokens: &[String], language: Language, rules: &StemRules) -> Vec<String> {
    tokens.iter().map(|t| rules.stem_word(t, language)).collect()
}

#[derive(Debug, Clone)]
pub struct PreprocessConfig {
    pub stopwords: StopwordTable,
    pub stems: StemRules,
    /// Minimum token length per language; 0 disables the filter.
    pub min_token_len: BTreeMap<Language, usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            stopwords: StopwordTable::bundled(),
            stems: StemRules::bundled(),
            min_token_len: Language::ALL.iter().map(|&l| (l, 3)).collect(),
        }
    }
}

impl PreprocessConfig {
    fn min_len(&self, language: Language) -> usize {
        self.min_token_len.get(&language).copied().unwrap_or(3)
    }
}

/// D3: drops stopwords and tokens shorter than `min_len` characters.
pub fn remove_stopwords(
    tokens: &[String],
    language: Language,
    table: &StopwordTable,
    min_len: usize,
) -> Result<Vec<String>, PreprocessError> {
    if !table.has_language(language) {
        return Err(PreprocessError::UnknownLanguage(language));
    }
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        if t.chars().count() >= min_len && !table.contains(language, t)? {
            out.push(t.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    D1,
    D2,
    D3,
    D4,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedTweet {
    pub tweet_id: String,
    pub language: Language,
    pub label: Option<Label>,
    pub tokens: Vec<String>,
    pub stage: Stage,
}

impl TokenizedTweet {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub input_tokens: usize,
    pub after_stopwords: usize,
    pub after_stem: usize,
}

/// Runs D1 through D4 on one text. Stemmed tokens that land on a stopword
/// are dropped as well, so D4 output never contains stopwords.
pub fn preprocess_text(
    text: &str,
    language: Language,
    config: &PreprocessConfig,
) -> Result<(Vec<String>, StageCounts), PreprocessError> {
    let tokens = tokenize(&clean(text));
    let filtered = remove_stopwords(&tokens, language, &config.stopwords, config.min_len(language))?;
    let stemmed = stem(&filtered, language, &config.stems);
    let mut out = Vec::with_capacity(stemmed.len());
    for t in stemmed {
        if !config.stopwords.contains(language, &t)? {
            out.push(t);
        }
    }
    let counts = StageCounts {
        input_tokens: tokens.len(),
        after_stopwords: filtered.len(),
        after_stem: out.len(),
    };
    Ok((out, counts))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub tweets: usize,
    pub counts: StageCounts,
    pub emptied: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedCorpus {
    pub tweets: Vec<TokenizedTweet>,
    pub report: PreprocessReport,
}

impl ProcessedCorpus {
    /// Back to a plain corpus whose text is the space-joined D4 tokens.
    pub fn to_corpus(&self, provenance: &str) -> Corpus {
        Corpus {
            tweets: self
                .tweets
                .iter()
                .map(|t| crate::corpus::Tweet::new(t.tweet_id.clone(), t.text(), t.language, t.label))
                .collect(),
            provenance: provenance.to_string(),
        }
    }

    pub fn documents(&self) -> Vec<Vec<String>> {
        self.tweets.iter().map(|t| t.tokens.clone()).collect()
    }
}

/// Header of the token file: tokens are space-joined and may be empty.
pub const TOKENS_HEADER: [&str; 4] = ["id", "tokens", "language", "label"];

pub fn write_tokens<W: Write>(tweets: &[TokenizedTweet], writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TOKENS_HEADER)?;
    for t in tweets {
        w.write_record([
            t.tweet_id.as_str(),
            t.text().as_str(),
            t.language.as_str(),
            t.label.map(Label::as_str).unwrap_or(""),
        ])?;
    }
    w.flush()
}

/// Reads a token file written by [`write_tokens`]; rows come back at D4.
pub fn read_tokens<R: Read>(reader: R, origin: &str) -> Result<Vec<TokenizedTweet>, PreprocessError> {
    let bad = |row: usize, message: String| PreprocessError::BadTokens {
        path: origin.to_string(),
        row,
        message,
    };
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(|e| bad(0, e.to_string()))?;
    if header.iter().map(str::trim).ne(TOKENS_HEADER) {
        return Err(bad(0, format!("header must be {}", TOKENS_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| bad(row, e.to_string()))?;
        if rec.len() != 4 {
            return Err(bad(row, format!("expected 4 columns, found {}", rec.len())));
        }
        let language = rec[2]
            .parse()
            .map_err(|_| bad(row, format!("unknown language `{}`", &rec[2])))?;
        let label = match rec[3].trim() {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(row, format!("unknown label `{s}`")))?),
        };
        out.push(TokenizedTweet {
            tweet_id: rec[0].to_string(),
            language,
            label,
            tokens: tokenize(&rec[1]),
            stage: Stage::D4,
        });
    }
    Ok(out)
}

/// Applies the pipeline to every tweet. Tweets that lose all their tokens
/// are kept with an empty token list and listed in the report.
pub fn preprocess_corpus(corpus: &Corpus, config: &PreprocessConfig) -> Result<ProcessedCorpus, PreprocessError> {
    let mut report = PreprocessReport::default();
    let mut tweets = Vec::with_capacity(corpus.len());
    for t in &corpus.tweets {
        let (tokens, c) = preprocess_text(&t.text, t.language, config)?;
        report.counts.input_tokens += c.input_tokens;
        report.counts.after_stopwords += c.after_stopwords;
        report.counts.after_stem += c.after_stem;
        if tokens.is_empty() {
            report.emptied.push(t.id.clone());
        }
        tweets.push(TokenizedTweet {
            tweet_id: t.id.clone(),
            language: t.language,
            label: t.label,
            tokens,
            stage: Stage::D4,
        });
    }
    report.tweets = tweets.len();
    Ok(ProcessedCorpus { tweets, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn token_file_round_trip() {
        let tweets = vec![
            TokenizedTweet {
                tweet_id: "a".into(),
                language: Language::Urdu,
                label: Some(Label::NotHateful),
                tokens: toks(&["کتاب", "دوست"]),
                stage: Stage::D4,
            },
            TokenizedTweet {
                tweet_id: "b".into(),
                language: Language::English,
                label: None,
                tokens: vec![],
                stage: Stage::D4,
            },
        ];
        let mut buf = Vec::new();
        write_tokens(&tweets, &mut buf).unwrap();
        assert_eq!(read_tokens(buf.as_slice(), "mem").unwrap(), tweets);
        assert!(read_tokens("id,text,language,label\n".as_bytes(), "mem").is_err());
    }

    #[test]
    fn clean_fixture() {
        assert_eq!(clean("Check #Hate http://x.co 123 !!"), "check hate");
        assert_eq!(clean(""), "");
        assert_eq!(clean("I ❤️ you 😡😡 www.bad.com/x"), "i you");
        assert_eq!(clean("¡Qué mierda de gente!"), "qué mierda de gente");
    }

    #[test]
    fn clean_leaves_plain_urdu_alone() {
        let urdu = "تم ایک گدھا ہو";
        assert_eq!(clean(urdu), urdu);
        // Urdu full stop and digits go
        assert_eq!(clean("تم گدھا ہو۔ ۱۲۳"), "تم گدھا ہو");
    }

    #[test]
    fn tokenize_cases() {
        assert_eq!(tokenize("check hate"), toks(&["check", "hate"]));
        assert_eq!(tokenize("  a  b "), toks(&["a", "b"]));
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn stopword_and_length_filter() {
        let table = StopwordTable::bundled();
        assert_eq!(
            remove_stopwords(&toks(&["the", "dog"]), Language::English, &table, 3).unwrap(),
            toks(&["dog"])
        );
        assert_eq!(
            remove_stopwords(&toks(&["ab", "abc"]), Language::English, &table, 3).unwrap(),
            toks(&["abc"])
        );
        assert!(remove_stopwords(&[], Language::English, &table, 3).unwrap().is_empty());
        let empty = StopwordTable::default();
        assert!(matches!(
            remove_stopwords(&toks(&["x"]), Language::Urdu, &empty, 3),
            Err(PreprocessError::UnknownLanguage(Language::Urdu))
        ));
    }

    #[test]
    fn stems_hating_to_hate() {
        let r = StemRules::bundled();
        assert_eq!(stem(&toks(&["hating"]), Language::English, &r), toks(&["hate"]));
        assert_eq!(stem(&toks(&["dog"]), Language::English, &r), toks(&["dog"]));
    }

    #[test]
    fn rejects_lengthening_rule() {
        let mut r = StemRules::default();
        let err = r.insert_csv(Language::English, "suffix,replacement,min_stem_len\ns,ss,1\n", "x.csv");
        assert!(matches!(err, Err(PreprocessError::BadRule { line: 2, .. })));
    }

    #[test]
    fn all_stopword_tweet_is_emptied() {
        let c = Corpus::new(
            vec![crate::corpus::Tweet::new("1", "the and of", Language::English, None)],
            "t",
        )
        .unwrap();
        let p = preprocess_corpus(&c, &PreprocessConfig::default()).unwrap();
        assert!(p.tweets[0].tokens.is_empty());
        assert_eq!(p.report.emptied, vec!["1".to_string()]);
    }

    #[test]
    fn clean_minimal_tweet_is_fixpoint() {
        let cfg = PreprocessConfig::default();
        let (t, _) = preprocess_text("dog cat", Language::English, &cfg).unwrap();
        assert_eq!(t, toks(&["dog", "cat"]));
    }

    #[test]
    fn length_filter_can_be_disabled() {
        let mut cfg = PreprocessConfig::default();
        cfg.min_token_len.insert(Language::Urdu, 0);
        let (t, _) = preprocess_text("ٹو گدھا", Language::Urdu, &cfg).unwrap();
        assert_eq!(t.len(), 2);
    }
}
