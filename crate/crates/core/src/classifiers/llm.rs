//! Few-shot classification through a chat-completion style model.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Prediction;
use crate::annotation::GUIDELINES;
use crate::corpus::{Corpus, Label, Tweet};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("provider error: {message}")]
    Provider { message: String, retryable: bool },
    #[error("API key variable `{0}` is not set")]
    MissingKey(String),
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("template: {0}")]
    Template(String),
    #[error("classifying tweet {tweet_id} failed: {source}")]
    Tweet {
        tweet_id: String,
        #[source]
        source: Box<LlmError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Timeout => true,
            LlmError::Provider { retryable, .. } => *retryable,
            LlmError::Tweet { source, .. } => source.is_retryable(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub template: String,
    pub shots_per_class: usize,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub api_key_env: String,
    pub parallelism: usize,
    /// Seeds exemplar selection.
    pub seed: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            template: "fewshot_v1".into(),
            shots_per_class: 3,
            temperature: 0.0,
            timeout_secs: 60,
            max_retries: 2,
            backoff_ms: 1000,
            api_key_env: "HSD_LLM_API_KEY".into(),
            parallelism: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmRequest {
    pub tweet_id: String,
    pub tweet_text: String,
    pub prompt: String,
}

pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError>;
}

/// Case-insensitive. "not-hateful" or "not hateful" anywhere wins;
/// otherwise "hateful" anywhere means Hateful; otherwise abstain.
pub fn parse_llm_response(text: &str) -> Option<Label> {
    let lower = text.to_lowercase();
    let negated = Regex::new(r"not[\s-]+hateful").expect("static pattern");
    if negated.is_match(&lower) {
        Some(Label::NotHateful)
    } else if lower.contains("hateful") {
        Some(Label::Hateful)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
}

impl PromptTemplate {
    const PLACEHOLDERS: [&'static str; 3] = ["guidelines", "examples", "tweet"];

    pub fn new(id: &str, text: &str) -> Result<Self, LlmError> {
        let names = Self::placeholders(text);
        if let Some(unknown) = names.iter().find(|n| !Self::PLACEHOLDERS.contains(&n.as_str())) {
            return Err(LlmError::Template(format!("{id}: unknown placeholder {{{unknown}}}")));
        }
        if !names.contains("tweet") {
            return Err(LlmError::Template(format!("{id}: missing {{tweet}} placeholder")));
        }
        Ok(PromptTemplate {
            id: id.to_string(),
            text: text.to_string(),
        })
    }

    pub fn bundled() -> Self {
        Self::new("fewshot_v1", include_str!("../../data/prompt_fewshot_v1.txt")).expect("bundled template is valid")
    }

    /// The template id is the file stem.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("template");
        Self::new(id, &fs::read_to_string(path)?)
    }

    fn placeholders(text: &str) -> BTreeSet<String> {
        let re = Regex::new(r"\{([a-z_]+)\}").expect("static pattern");
        re.captures_iter(text).map(|c| c[1].to_string()).collect()
    }

    pub fn render(&self, guidelines: &str, examples: &str, tweet: &str) -> String {
        self.text
            .replace("{guidelines}", guidelines)
            .replace("{examples}", examples)
            .replace("{tweet}", tweet)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub label: Label,
}

/// Up to `shots` tweets per class from a seeded shuffle of the id-sorted
/// pool, interleaved Hateful first.
pub fn select_exemplars(pool: &Corpus, shots: usize, seed: u64) -> Vec<Exemplar> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class: Vec<Vec<&Tweet>> = Label::ALL
        .iter()
        .map(|l| {
            let mut ts: Vec<&Tweet> = pool.iter().filter(|t| t.label == Some(*l)).collect();
            ts.sort_by(|a, b| a.id.cmp(&b.id));
            ts.shuffle(&mut rng);
            ts.truncate(shots);
            ts
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..shots {
        for (class, ts) in Label::ALL.iter().zip(per_class.iter_mut()) {
            if let Some(t) = ts.get(i) {
                out.push(Exemplar {
                    text: t.text.clone(),
                    label: *class,
                });
            }
        }
    }
    out
}

/// A template with its exemplars fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotPrompt {
    pub template: PromptTemplate,
    pub exemplars: Vec<Exemplar>,
}

impl FewShotPrompt {
    pub fn render(&self, tweet_text: &str) -> String {
        let examples: Vec<String> = self
            .exemplars
            .iter()
            .map(|e| format!("Post: {}\nAnswer: {}", e.text.replace('\n', " "), e.label))
            .collect();
        self.template
            .render(GUIDELINES, &examples.join("\n\n"), &tweet_text.replace('\n', " "))
    }
}

/// One request per tweet, retried on timeouts and retryable provider
/// errors. An unparsable answer becomes an abstention.
pub fn llm_classify<P: LlmProvider + ?Sized>(
    tweet: &Tweet,
    config: &LlmConfig,
    prompt: &FewShotPrompt,
    provider: &P,
) -> Result<Prediction, LlmError> {
    let request = LlmRequest {
        tweet_id: tweet.id.clone(),
        tweet_text: tweet.text.clone(),
        prompt: prompt.render(&tweet.text),
    };
    let mut attempt = 0;
    let reply = loop {
        match provider.complete(&request) {
            Ok(reply) => break reply,
            Err(e) if e.is_retryable() && attempt < config.max_retries => {
                thread::sleep(Duration::from_millis(config.backoff_ms) * 2u32.saturating_pow(attempt));
                attempt += 1;
            }
            Err(e) => {
                return Err(LlmError::Tweet {
                    tweet_id: tweet.id.clone(),
                    source: Box::new(e),
                })
            }
        }
    };
    Ok(Prediction {
        tweet_id: tweet.id.clone(),
        classifier_id: format!("llm-{}", config.model),
        label: parse_llm_response(&reply),
        score: None,
    })
}

/// Classifies every tweet with up to `config.parallelism` requests in
/// flight; output follows input order.
pub fn llm_classify_all<P: LlmProvider + ?Sized>(
    tweets: &[Tweet],
    config: &LlmConfig,
    prompt: &FewShotPrompt,
    provider: &P,
) -> Result<Vec<Prediction>, LlmError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| LlmError::Pool(e.to_string()))?;
    pool.install(|| {
        tweets
            .par_iter()
            .map(|t| llm_classify(t, config, prompt, provider))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Reply {
    Text(String),
    Timeout,
    Error(String),
}

impl Reply {
    fn parse(s: &str) -> Reply {
        let s = s.trim();
        if s == "!timeout" {
            Reply::Timeout
        } else if let Some(msg) = s.strip_prefix("!error") {
            Reply::Error(msg.trim().to_string())
        } else {
            Reply::Text(s.to_string())
        }
    }

    fn into_result(self) -> Result<String, LlmError> {
        match self {
            Reply::Text(t) => Ok(t),
            Reply::Timeout => Err(LlmError::Timeout),
            Reply::Error(message) => Err(LlmError::Provider {
                message,
                retryable: false,
            }),
        }
    }
}

/// Offline provider driven by a response script.
///
/// ```text
/// # comment
/// seq: !timeout              replies consumed in order, first
/// seq: Not-Hateful
/// rule: idiot => Hateful     first rule whose text occurs in the tweet
/// default: Not-Hateful       otherwise
/// ```
///
/// `!timeout` simulates a timeout and `!error <message>` a hard failure.
/// Scripts with `seq` lines depend on request order, so keep them to
/// single-threaded use.
pub struct ScriptedLlm {
    sequence: Vec<Reply>,
    next: AtomicUsize,
    rules: Vec<(String, Reply)>,
    default: Option<Reply>,
}

impl ScriptedLlm {
    pub fn parse(script: &str) -> Result<Self, LlmError> {
        let mut out = ScriptedLlm {
            sequence: Vec::new(),
            next: AtomicUsize::new(0),
            rules: Vec::new(),
            default: None,
        };
        for (i, raw) in script.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| LlmError::Script {
                line: i + 1,
                message: message.to_string(),
            };
            let (kind, rest) = line.split_once(':').ok_or_else(|| err("expected `kind: value`"))?;
            match kind.trim() {
                "seq" => out.sequence.push(Reply::parse(rest)),
                "default" => out.default = Some(Reply::parse(rest)),
                "rule" => {
                    let (pattern, reply) = rest
                        .split_once("=>")
                        .ok_or_else(|| err("rule needs `pattern => reply`"))?;
                    let pattern = pattern.trim().to_lowercase();
                    if pattern.is_empty() {
                        return Err(err("empty rule pattern"));
                    }
                    out.rules.push((pattern, Reply::parse(reply)));
                }
                other => return Err(err(&format!("unknown kind `{other}`"))),
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

impl LlmProvider for ScriptedLlm {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        if let Some(reply) = self.sequence.get(i) {
            return reply.clone().into_result();
        }
        let text = request.tweet_text.to_lowercase();
        if let Some((_, reply)) = self.rules.iter().find(|(p, _)| text.contains(p.as_str())) {
            return reply.clone().into_result();
        }
        match &self.default {
            Some(reply) => reply.clone().into_result(),
            None => Err(LlmError::Provider {
                message: "script has no reply for this request".into(),
                retryable: false,
            }),
        }
    }
}

/// Chat-completion client: `POST endpoint` with a Bearer key,
/// `{"model", "temperature", "messages": [{"role": "user", ...}]}`, reading
/// `choices[0].message.content`.
pub struct HttpLlm {
    config: LlmConfig,
    key: String,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl HttpLlm {
    pub fn new(config: LlmConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env).map_err(|_| LlmError::MissingKey(config.api_key_env.clone()))?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: LlmConfig, key: String) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Provider {
                message: e.to_string(),
                retryable: false,
            })?;
        Ok(HttpLlm { config, key, client })
    }
}

impl LlmProvider for HttpLlm {
    fn id(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    LlmError::Timeout
                } else {
                    LlmError::Provider {
                        message: e.to_string(),
                        retryable: true,
                    }
                }
            })?;
        let status = response.status();
        if !status.is_success() {
            return Err(LlmError::Provider {
                message: format!("HTTP {status}"),
                retryable: status.as_u16() == 429 || status.is_server_error(),
            });
        }
        let parsed: ChatResponse = response.json().map_err(|e| LlmError::Provider {
            message: format!("bad response body: {e}"),
            retryable: false,
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Provider {
                message: "response has no choices".into(),
                retryable: false,
            })
    }
}
