use std::fs::File;
use std::io::Read;
use std::path::Path;

use regex::{NoExpand, Regex};

use super::TranslationError;
use crate::corpus::Language;

/// A term whose translation must contain a fixed rendering.
///
/// The `lang` column holds the source language (`es`), or a pair (`es>en`)
/// to restrict the entry to one target.
#[derive(Debug, Clone)]
pub struct GlossaryEntry {
    pub source: Language,
    pub target: Option<Language>,
    pub term: String,
    pub rendering: String,
    pub note: String,
    pattern: Regex,
}

impl GlossaryEntry {
    pub fn new(
        source: Language,
        target: Option<Language>,
        term: &str,
        rendering: &str,
        note: &str,
    ) -> Result<Self, TranslationError> {
        let term = term.trim();
        if term.is_empty() {
            return Err(TranslationError::format(0, "glossary term is empty"));
        }
        Ok(GlossaryEntry {
            source,
            target,
            term: term.to_string(),
            rendering: rendering.trim().to_string(),
            note: note.trim().to_string(),
            pattern: word_pattern(term),
        })
    }

    fn applies(&self, source: Language, target: Language) -> bool {
        self.source == source && self.target.is_none_or(|t| t == target)
    }
}

/// Case-insensitive literal match that does not start or end inside a word.
fn word_pattern(literal: &str) -> Regex {
    let edge = |c: Option<char>| {
        if c.is_some_and(char::is_alphanumeric) {
            r"\b"
        } else {
            ""
        }
    };
    let pattern = format!(
        "(?i){}{}{}",
        edge(literal.chars().next()),
        regex::escape(literal),
        edge(literal.chars().last())
    );
    Regex::new(&pattern).expect("escaped literal is a valid pattern")
}

pub(crate) fn contains_ci(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// Replaces up to `limit` whole-word occurrences of `from`, or returns
/// `None` if there are none.
pub(crate) fn replace_ci(text: &str, from: &str, to: &str, limit: usize) -> Option<String> {
    let re = word_pattern(from);
    re.is_match(text)
        .then(|| re.replacen(text, limit, NoExpand(to)).into_owned())
}

#[derive(Debug, Clone, Default)]
pub struct Glossary {
    /// Longest term first.
    entries: Vec<GlossaryEntry>,
}

impl Glossary {
    pub fn new(mut entries: Vec<GlossaryEntry>) -> Self {
        entries.sort_by(|a, b| {
            b.term
                .chars()
                .count()
                .cmp(&a.term.chars().count())
                .then_with(|| a.term.cmp(&b.term))
        });
        Glossary { entries }
    }

    /// Reads `lang,term,required_rendering,note` rows.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, TranslationError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| TranslationError::format(1, e))?.clone();
        let expected = ["lang", "term", "required_rendering", "note"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(TranslationError::format(
                1,
                format!("header must be {}", expected.join(",")),
            ));
        }
        let mut entries = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| TranslationError::format(line, e))?;
            if row.len() != 4 {
                return Err(TranslationError::format(line, "expected 4 fields"));
            }
            let lang = |s: &str| {
                s.trim()
                    .parse::<Language>()
                    .map_err(|e| TranslationError::format(line, e))
            };
            let (source, target) = match row[0].split_once('>') {
                Some((s, t)) => (lang(s)?, Some(lang(t)?)),
                None => (lang(&row[0])?, None),
            };
            let entry = GlossaryEntry::new(source, target, &row[1], &row[2], &row[3]).map_err(|e| match e {
                TranslationError::Format { message, .. } => TranslationError::Format { line, message },
                other => other,
            })?;
            entries.push(entry);
        }
        Ok(Glossary::new(entries))
    }

    pub fn load(path: &Path) -> Result<Self, TranslationError> {
        Self::from_csv(File::open(path)?)
    }

    pub fn entries(&self) -> &[GlossaryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries found in `text`, longest first, with their occurrence count.
    /// A shorter term inside a longer match is not reported.
    pub fn matches(&self, text: &str, source: Language, target: Language) -> Vec<(&GlossaryEntry, usize)> {
        let mut covered: Vec<(usize, usize)> = Vec::new();
        let mut out = Vec::new();
        for entry in self.entries.iter().filter(|e| e.applies(source, target)) {
            let mut count = 0;
            for m in entry.pattern.find_iter(text) {
                if covered.iter().all(|&(s, e)| m.end() <= s || m.start() >= e) {
                    covered.push((m.start(), m.end()));
                    count += 1;
                }
            }
            if count > 0 {
                out.push((entry, count));
            }
        }
        out
    }

    /// Entries present in the source whose rendering is absent from the
    /// translation.
    pub fn violations(
        &self,
        source_text: &str,
        translated: &str,
        source: Language,
        target: Language,
    ) -> Vec<&GlossaryEntry> {
        self.matches(source_text, source, target)
            .into_iter()
            .map(|(e, _)| e)
            .filter(|e| !contains_ci(translated, &e.rendering))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> Glossary {
        Glossary::from_csv(
            "lang,term,required_rendering,note\n\
             es,hijo,son,mild\n\
             es>en,hijo de puta,son of a bitch,severe\n\
             ur,کتا,dog,\n"
                .as_bytes(),
        )
        .unwrap()
    }

    #[test]
    fn longest_match_hides_inner_term() {
        let g = g();
        let m = g.matches("HIJO DE PUTA y hijo", Language::Spanish, Language::English);
        let terms: Vec<(&str, usize)> = m.iter().map(|(e, n)| (e.term.as_str(), *n)).collect();
        assert_eq!(terms, [("hijo de puta", 1), ("hijo", 1)]);
        // pair-restricted entry does not apply to Urdu targets
        let m = g.matches("hijo de puta", Language::Spanish, Language::Urdu);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].0.term, "hijo");
    }

    #[test]
    fn word_boundaries() {
        let g = g();
        assert!(g.matches("hijos", Language::Spanish, Language::English).is_empty());
        assert_eq!(g.matches("تم کتا ہو", Language::Urdu, Language::English).len(), 1);
    }

    #[test]
    fn replace_is_bounded() {
        assert_eq!(
            replace_ci("Jerk and jerk", "jerk", "X", 1).as_deref(),
            Some("X and jerk")
        );
        assert_eq!(replace_ci("jerky", "jerk", "X", 1), None);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(Glossary::from_csv("lang,term,required_rendering,note\nes, ,x,\n".as_bytes()).is_err());
        assert!(Glossary::from_csv("lang,term\nes,a\n".as_bytes()).is_err());
    }
}
