use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{pre_tokenize, TranslationError};
use crate::corpus::Language;

pub trait TranslationProvider: Send + Sync {
    /// Stable identifier, part of the cache key.
    fn id(&self) -> &str;

    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, TranslationError>;
}

/// Deterministic offline translator backed by a phrase table. Phrases are
/// matched greedily, longest first, on lowercase whitespace tokens;
/// unmatched tokens pass through unchanged.
#[derive(Debug, Clone, Default)]
pub struct PhraseTable {
    pairs: BTreeMap<(Language, Language), HashMap<Vec<String>, String>>,
    longest: BTreeMap<(Language, Language), usize>,
}

impl PhraseTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: Language, target: Language, phrase: &str, rendering: &str) {
        let key: Vec<String> = pre_tokenize(phrase).into_iter().map(|t| t.to_lowercase()).collect();
        if key.is_empty() {
            return;
        }
        let len = self.longest.entry((source, target)).or_insert(0);
        *len = (*len).max(key.len());
        self.pairs
            .entry((source, target))
            .or_default()
            .insert(key, rendering.trim().to_string());
    }

    /// Reads `source_lang,target_lang,source_phrase,target_phrase` rows.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, TranslationError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| TranslationError::format(1, e))?.clone();
        let expected = ["source_lang", "target_lang", "source_phrase", "target_phrase"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(TranslationError::format(
                1,
                format!("header must be {}", expected.join(",")),
            ));
        }
        let mut table = PhraseTable::new();
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
            table.insert(lang(&row[0])?, lang(&row[1])?, &row[2], &row[3]);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, TranslationError> {
        Self::from_csv(File::open(path)?)
    }

    pub fn supports(&self, source: Language, target: Language) -> bool {
        self.pairs.contains_key(&(source, target))
    }

    pub fn len(&self) -> usize {
        self.pairs.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct MockTranslator {
    table: PhraseTable,
}

impl MockTranslator {
    pub fn new(table: PhraseTable) -> Self {
        MockTranslator { table }
    }
}

impl TranslationProvider for MockTranslator {
    fn id(&self) -> &str {
        "mock"
    }

    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, TranslationError> {
        if source == target {
            return Ok(text.to_string());
        }
        let phrases = self
            .table
            .pairs
            .get(&(source, target))
            .ok_or(TranslationError::UnsupportedPair {
                from: source,
                to: target,
            })?;
        let longest = self.table.longest[&(source, target)];
        let tokens = pre_tokenize(text);
        let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            let max = longest.min(tokens.len() - i);
            let hit = (1..=max)
                .rev()
                .find_map(|n| phrases.get(&lower[i..i + n]).map(|r| (n, r)));
            match hit {
                Some((n, rendering)) => {
                    out.push(rendering.clone());
                    i += n;
                }
                None => {
                    out.push(tokens[i].clone());
                    i += 1;
                }
            }
        }
        Ok(out.join(" "))
    }
}

/// Settings for [`HttpTranslator`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff: Duration,
    /// Minimum spacing between requests.
    pub min_interval: Duration,
}

impl Default for HttpSettings {
    fn default() -> Self {
        HttpSettings {
            endpoint: "https://translation.googleapis.com/language/translate/v2".into(),
            api_key_env: "HSD_TRANSLATE_API_KEY".into(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff: Duration::from_millis(500),
            min_interval: Duration::from_millis(0),
        }
    }
}

/// Client for a v2-style translation REST endpoint.
///
/// Sends `POST {endpoint}?key=..` with `{"q", "source", "target", "format"}`
/// and reads `data.translations[0].translatedText`. Status 429, 5xx and
/// transport errors are retried with exponential backoff.
pub struct HttpTranslator {
    settings: HttpSettings,
    key: String,
    client: reqwest::blocking::Client,
    last_request: Mutex<Option<Instant>>,
}

#[derive(Deserialize)]
struct V2Response {
    data: V2Data,
}

#[derive(Deserialize)]
struct V2Data {
    translations: Vec<V2Translation>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct V2Translation {
    translated_text: String,
}

impl HttpTranslator {
    pub fn new(settings: HttpSettings) -> Result<Self, TranslationError> {
        let key = std::env::var(&settings.api_key_env)
            .map_err(|_| TranslationError::MissingKey(settings.api_key_env.clone()))?;
        Self::with_key(settings, key)
    }

    pub fn with_key(settings: HttpSettings, key: String) -> Result<Self, TranslationError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| TranslationError::provider(e.to_string(), false))?;
        Ok(HttpTranslator {
            settings,
            key,
            client,
            last_request: Mutex::new(None),
        })
    }

    fn throttle(&self) {
        let mut last = self.last_request.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            let wait = self.settings.min_interval.saturating_sub(prev.elapsed());
            if !wait.is_zero() {
                thread::sleep(wait);
            }
        }
        *last = Some(Instant::now());
    }

    fn attempt(&self, text: &str, source: Language, target: Language) -> Result<String, TranslationError> {
        self.throttle();
        let body = serde_json::json!({
            "q": text,
            "source": source.code(),
            "target": target.code(),
            "format": "text",
        });
        let url = reqwest::Url::parse_with_params(&self.settings.endpoint, [("key", self.key.as_str())])
            .map_err(|e| TranslationError::provider(format!("bad endpoint: {e}"), false))?;
        let response = self
            .client
            .post(url)
            .json(&body)
            .send()
            .map_err(|e| TranslationError::provider(e.to_string(), true))?;
        let status = response.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err(TranslationError::provider(format!("HTTP {status}"), retryable));
        }
        let parsed: V2Response = response
            .json()
            .map_err(|e| TranslationError::provider(format!("bad response body: {e}"), false))?;
        parsed
            .data
            .translations
            .into_iter()
            .next()
            .map(|t| t.translated_text)
            .ok_or_else(|| TranslationError::provider("response has no translations", false))
    }
}

impl TranslationProvider for HttpTranslator {
    fn id(&self) -> &str {
        "http"
    }

    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, TranslationError> {
        if source == target {
            return Ok(text.to_string());
        }
        let mut attempt = 0;
        loop {
            match self.attempt(text, source, target) {
                Err(TranslationError::Provider { retryable: true, .. }) if attempt < self.settings.max_retries => {
                    thread::sleep(self.settings.backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    provider: String,
    source: Language,
    target: Language,
    text: String,
    translation: String,
}

type CacheKey = (String, Language, Language, String);

/// Wraps a provider with a persistent cache keyed by
/// (text, source, target, provider). Entries are appended to a JSON-lines
/// file as soon as they are produced, so an aborted run can resume.
pub struct CachedProvider<P> {
    inner: P,
    entries: Mutex<HashMap<CacheKey, String>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl<P: TranslationProvider> CachedProvider<P> {
    pub fn in_memory(inner: P) -> Self {
        CachedProvider {
            inner,
            entries: Mutex::new(HashMap::new()),
            file: None,
            path: None,
        }
    }

    pub fn open(inner: P, path: &Path) -> Result<Self, TranslationError> {
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: CacheEntry = serde_json::from_str(&line).map_err(|err| TranslationError::format(i + 1, err))?;
                entries.insert((e.text, e.source, e.target, e.provider), e.translation);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(CachedProvider {
            inner,
            entries: Mutex::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: TranslationProvider> TranslationProvider for CachedProvider<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, TranslationError> {
        let key = (text.to_string(), source, target, self.inner.id().to_string());
        if let Some(hit) = self.entries.lock().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let translation = self.inner.translate(text, source, target)?;
        let mut entries = self.entries.lock().expect("cache poisoned");
        if entries.insert(key, translation.clone()).is_none() {
            if let Some(file) = &self.file {
                let entry = CacheEntry {
                    provider: self.inner.id().to_string(),
                    source,
                    target,
                    text: text.to_string(),
                    translation: translation.clone(),
                };
                let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
                line.push('\n');
                file.lock().expect("cache file poisoned").write_all(line.as_bytes())?;
            }
        }
        Ok(translation)
    }
}

impl<P: TranslationProvider + ?Sized> TranslationProvider for &P {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, TranslationError> {
        (**self).translate(text, source, target)
    }
}

impl<P: TranslationProvider + ?Sized> TranslationProvider for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn translate(&self, text: &str, source: Language, target: Language) -> Result<String, TranslationError> {
        (**self).translate(text, source, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn table() -> PhraseTable {
        let csv = "source_lang,target_lang,source_phrase,target_phrase\n\
                   es,en,hijo de puta,jerk\n\
                   es,en,hijo,son\n\
                   es,en,eres,you are\n\
                   es,en,un,a\n\
                   es,en,perro,dog\n";
        PhraseTable::from_csv(csv.as_bytes()).unwrap()
    }

    #[test]
    fn longest_phrase_wins() {
        let m = MockTranslator::new(table());
        let out = m
            .translate("Eres un HIJO de puta", Language::Spanish, Language::English)
            .unwrap();
        assert_eq!(out, "you are a jerk");
        assert_eq!(
            m.translate("hijo perro", Language::Spanish, Language::English).unwrap(),
            "son dog"
        );
        assert_eq!(
            m.translate("hola perro", Language::Spanish, Language::English).unwrap(),
            "hola dog"
        );
    }

    #[test]
    fn unsupported_pair_and_identity() {
        let m = MockTranslator::new(table());
        assert!(matches!(
            m.translate("x", Language::Urdu, Language::English),
            Err(TranslationError::UnsupportedPair { .. })
        ));
        assert_eq!(
            m.translate("  odd  spacing ", Language::Urdu, Language::Urdu).unwrap(),
            "  odd  spacing "
        );
    }

    #[test]
    fn bad_table_header() {
        assert!(PhraseTable::from_csv("a,b,c,d\n".as_bytes()).is_err());
        assert!(
            PhraseTable::from_csv("source_lang,target_lang,source_phrase,target_phrase\nxx,en,a,b\n".as_bytes())
                .is_err()
        );
    }

    struct Counting(AtomicUsize);

    impl TranslationProvider for Counting {
        fn id(&self) -> &str {
            "counting"
        }
        fn translate(&self, text: &str, _: Language, _: Language) -> Result<String, TranslationError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(text.to_uppercase())
        }
    }

    #[test]
    fn cache_persists_and_skips_provider() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = CachedProvider::open(Counting(AtomicUsize::new(0)), &path).unwrap();
            c.translate("abc", Language::English, Language::Urdu).unwrap();
            c.translate("abc", Language::English, Language::Urdu).unwrap();
            c.translate("abc", Language::English, Language::Spanish).unwrap();
            assert_eq!(c.inner().0.load(Ordering::SeqCst), 2);
        }
        let c = CachedProvider::open(Counting(AtomicUsize::new(0)), &path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.translate("abc", Language::English, Language::Urdu).unwrap(), "ABC");
        assert_eq!(c.inner().0.load(Ordering::SeqCst), 0);
    }
}
