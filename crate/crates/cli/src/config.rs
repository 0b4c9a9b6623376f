//! Run configuration: one versioned TOML file. String values may reference
//! environment variables as `${NAME}`; paths are relative to the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use hsd_core::attention::AttentionConfig;
use hsd_core::classifiers::{LlmConfig, NeuralTrainConfig, SvmConfig};
use hsd_core::features::{GloveConfig, IdfMode};
use hsd_core::translation::HttpSettings;
use hsd_core::Language;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub svm: SvmSection,
    #[serde(default)]
    pub attention: AttentionSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub translation: TranslationSection,
    #[serde(default)]
    pub annotation: AnnotationSection,
    /// Trainable classifiers run by `train`: `svm`, `attention`.
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<String>,
}

fn default_classifiers() -> Vec<String> {
    vec!["svm".into(), "attention".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub english: PathBuf,
    pub urdu: PathBuf,
    pub spanish: PathBuf,
    pub glossary: Option<PathBuf>,
    /// Needed by the mock translator.
    pub phrase_table: Option<PathBuf>,
    /// Scripted replies used by the mock LLM.
    pub llm_script: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    /// Language code to stopword file; bundled lists otherwise.
    pub stopwords: BTreeMap<String, PathBuf>,
    /// Language code to stem-rule CSV; bundled rules otherwise.
    pub stem_rules: BTreeMap<String, PathBuf>,
    /// Language code to minimum token length (0 disables the filter).
    pub min_token_len: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// `literal` or `log`.
    pub idf_mode: String,
    pub window: usize,
    pub glove_dim: usize,
    pub glove_epochs: usize,
    pub glove_learning_rate: f64,
    pub glove_x_max: f64,
    pub glove_alpha: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        let g = GloveConfig::default();
        FeatureSection {
            idf_mode: "literal".into(),
            window: 5,
            glove_dim: g.dim,
            glove_epochs: g.epochs,
            glove_learning_rate: g.learning_rate,
            glove_x_max: g.x_max,
            glove_alpha: g.alpha,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    pub c: f64,
    pub epochs: usize,
}

impl Default for SvmSection {
    fn default() -> Self {
        let d = SvmConfig::default();
        SvmSection {
            c: d.c,
            epochs: d.epochs,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSection {
    pub heads: usize,
    pub head_dim: usize,
    pub n_max: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AttentionSection {
    fn default() -> Self {
        let t = NeuralTrainConfig::default();
        AttentionSection {
            heads: 12,
            head_dim: 64,
            n_max: 64,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub model: String,
    pub endpoint: String,
    /// Literal key, usually `${VAR}`; falls back to `api_key_env`.
    pub api_key: Option<String>,
    pub api_key_env: String,
    /// Prompt template file; the bundled template otherwise.
    pub template: Option<PathBuf>,
    pub shots_per_class: usize,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub parallelism: usize,
}

impl Default for LlmSection {
    fn default() -> Self {
        let d = LlmConfig::default();
        LlmSection {
            model: d.model,
            endpoint: d.endpoint,
            api_key: None,
            api_key_env: d.api_key_env,
            template: None,
            shots_per_class: d.shots_per_class,
            temperature: d.temperature,
            timeout_secs: d.timeout_secs,
            max_retries: d.max_retries,
            backoff_ms: d.backoff_ms,
            parallelism: d.parallelism,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationSection {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub min_interval_ms: u64,
    pub parallelism: usize,
    /// Keep a JSON-lines cache of live translations under the output dir.
    pub cache: bool,
}

impl Default for TranslationSection {
    fn default() -> Self {
        let d = HttpSettings::default();
        TranslationSection {
            endpoint: d.endpoint,
            api_key: None,
            api_key_env: d.api_key_env,
            timeout_secs: d.timeout.as_secs(),
            max_retries: d.max_retries,
            backoff_ms: d.backoff.as_millis() as u64,
            min_interval_ms: d.min_interval.as_millis() as u64,
            parallelism: 4,
            cache: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationSection {
    pub host: String,
    pub port: u16,
    pub annotators_per_item: usize,
    /// Built UI assets served next to the API.
    pub assets_dir: Option<PathBuf>,
    /// Which corpus is queued for labeling: `en`, `ur` or `es`.
    pub language: String,
}

impl Default for AnnotationSection {
    fn default() -> Self {
        AnnotationSection {
            host: "127.0.0.1".into(),
            port: 8080,
            annotators_per_item: 3,
            assets_dir: None,
            language: "en".into(),
        }
    }
}

/// Replaces every `${NAME}` with the variable's value. Unset names are
/// collected rather than failing on the first.
pub fn interpolate(text: &str, lookup: impl Fn(&str) -> Option<String>, missing: &mut Vec<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find('}') {
            Some(end) => {
                let name = &after[..end];
                match lookup(name) {
                    Some(v) => out.push_str(&v),
                    None => missing.push(name.to_string()),
                }
                rest = &after[end + 1..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn interpolate_value(v: &mut toml::Value, missing: &mut Vec<String>) {
    match v {
        toml::Value::String(s) => *s = interpolate(s, |n| std::env::var(n).ok(), missing),
        toml::Value::Array(items) => items.iter_mut().for_each(|i| interpolate_value(i, missing)),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, i)| interpolate_value(i, missing)),
        _ => {}
    }
}

fn language_code(code: &str) -> Option<Language> {
    Language::ALL.into_iter().find(|l| l.code() == code)
}

impl RunConfig {
    /// Parses, interpolates, resolves paths against the file's directory
    /// and validates. All problems are reported together.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("cannot read config {}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        let mut missing = Vec::new();
        interpolate_value(&mut value, &mut missing);
        let mut problems: Vec<String> = missing
            .into_iter()
            .map(|n| format!("environment variable `{n}` is not set"))
            .collect();
        let mut config: RunConfig = match value.try_into() {
            Ok(c) => c,
            Err(e) => {
                problems.push(e.to_string());
                return Err(CliError::Config(problems));
            }
        };
        config.resolve(base);
        problems.extend(config.problems());
        if problems.is_empty() {
            Ok(config)
        } else {
            Err(CliError::Config(problems))
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [&mut paths.english, &mut paths.urdu, &mut paths.spanish] {
            fix(p);
        }
        for p in [
            &mut paths.glossary,
            &mut paths.phrase_table,
            &mut paths.llm_script,
            &mut paths.annotations,
            &mut self.llm.template,
            &mut self.annotation.assets_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.preprocess.stopwords.values_mut().for_each(fix);
        self.preprocess.stem_rules.values_mut().for_each(fix);
    }

    /// Every validation problem, in a stable order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.version != CONFIG_VERSION {
            out.push(format!("version must be {CONFIG_VERSION}, found {}", self.version));
        }
        let mut need = |label: &str, p: &Path| {
            if !p.is_file() {
                out.push(format!("{label}: file not found: {}", p.display()));
            }
        };
        need("paths.english", &self.paths.english);
        need("paths.urdu", &self.paths.urdu);
        need("paths.spanish", &self.paths.spanish);
        let optional = [
            ("paths.glossary", &self.paths.glossary),
            ("paths.phrase_table", &self.paths.phrase_table),
            ("paths.llm_script", &self.paths.llm_script),
            ("paths.annotations", &self.paths.annotations),
            ("llm.template", &self.llm.template),
        ];
        for (label, p) in optional {
            if let Some(p) = p {
                need(label, p);
            }
        }
        for (section, map) in [
            ("preprocess.stopwords", &self.preprocess.stopwords),
            ("preprocess.stem_rules", &self.preprocess.stem_rules),
        ] {
            for (code, p) in map {
                need(&format!("{section}.{code}"), p);
            }
        }
        if let Some(dir) = &self.annotation.assets_dir {
            if !dir.is_dir() {
                out.push(format!("annotation.assets_dir: directory not found: {}", dir.display()));
            }
        }
        let codes = self
            .preprocess
            .stopwords
            .keys()
            .chain(self.preprocess.stem_rules.keys())
            .chain(self.preprocess.min_token_len.keys())
            .chain(std::iter::once(&self.annotation.language));
        for code in codes {
            if language_code(code).is_none() {
                out.push(format!("unknown language code `{code}` (expected en, ur or es)"));
            }
        }
        let f = self.split.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            out.push(format!("split.test_fraction must be in (0, 1), found {f}"));
        }
        if self.features.idf_mode.parse::<IdfMode>().is_err() {
            out.push(format!(
                "features.idf_mode must be `literal` or `log`, found `{}`",
                self.features.idf_mode
            ));
        }
        if self.features.window == 0 {
            out.push("features.window must be at least 1".into());
        }
        if self.features.glove_dim == 0 {
            out.push("features.glove_dim must be at least 1".into());
        }
        if self.svm.c.is_nan() || self.svm.c <= 0.0 {
            out.push(format!("svm.c must be positive, found {}", self.svm.c));
        }
        if let Err(e) = self.attention_config().validate() {
            out.push(format!("attention: {e}"));
        }
        if self.attention.batch_size == 0 {
            out.push("attention.batch_size must be at least 1".into());
        }
        for c in &self.classifiers {
            if c != "svm" && c != "attention" {
                out.push(format!(
                    "classifiers: unknown classifier `{c}` (expected svm or attention)"
                ));
            }
        }
        if self.annotation.annotators_per_item < 2 {
            out.push("annotation.annotators_per_item must be at least 2".into());
        }
        out
    }

    pub fn idf_mode(&self) -> IdfMode {
        self.features.idf_mode.parse().expect("validated")
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig::scaled(self.attention.heads, self.attention.head_dim, self.attention.n_max)
    }

    pub fn neural_config(&self) -> NeuralTrainConfig {
        NeuralTrainConfig {
            epochs: self.attention.epochs,
            batch_size: self.attention.batch_size,
            learning_rate: self.attention.learning_rate,
            seed: self.seed,
        }
    }

    pub fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            c: self.svm.c,
            epochs: self.svm.epochs,
            seed: self.seed,
        }
    }

    pub fn glove_config(&self) -> GloveConfig {
        GloveConfig {
            dim: self.features.glove_dim,
            epochs: self.features.glove_epochs,
            learning_rate: self.features.glove_learning_rate,
            x_max: self.features.glove_x_max,
            alpha: self.features.glove_alpha,
            seed: self.seed,
        }
    }

    pub fn llm_config(&self) -> LlmConfig {
        let l = &self.llm;
        LlmConfig {
            endpoint: l.endpoint.clone(),
            model: l.model.clone(),
            template: LlmConfig::default().template,
            shots_per_class: l.shots_per_class,
            temperature: l.temperature,
            timeout_secs: l.timeout_secs,
            max_retries: l.max_retries,
            backoff_ms: l.backoff_ms,
            api_key_env: l.api_key_env.clone(),
            parallelism: l.parallelism,
            seed: self.seed,
        }
    }

    pub fn http_settings(&self) -> HttpSettings {
        let t = &self.translation;
        HttpSettings {
            endpoint: t.endpoint.clone(),
            api_key_env: t.api_key_env.clone(),
            timeout: Duration::from_secs(t.timeout_secs),
            max_retries: t.max_retries,
            backoff: Duration::from_millis(t.backoff_ms),
            min_interval: Duration::from_millis(t.min_interval_ms),
        }
    }

    pub fn annotation_language(&self) -> Language {
        language_code(&self.annotation.language).expect("validated")
    }

    /// Per-language overrides keyed by language.
    pub fn min_token_len(&self) -> BTreeMap<Language, usize> {
        self.preprocess
            .min_token_len
            .iter()
            .filter_map(|(c, n)| language_code(c).map(|l| (l, *n)))
            .collect()
    }

    pub fn stopword_files(&self) -> Vec<(Language, &Path)> {
        self.preprocess
            .stopwords
            .iter()
            .filter_map(|(c, p)| language_code(c).map(|l| (l, p.as_path())))
            .collect()
    }

    pub fn stem_rule_files(&self) -> Vec<(Language, &Path)> {
        self.preprocess
            .stem_rules
            .iter()
            .filter_map(|(c, p)| language_code(c).map(|l| (l, p.as_path())))
            .collect()
    }
}
