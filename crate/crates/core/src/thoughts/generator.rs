use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::cache::{cache_key, CacheEntry, ThoughtCache};
use super::embed::tokenize;
use super::prompt::parse_prompt;
use crate::error::{KcotError, Result};
use crate::par;

pub const DEFAULT_API_KEY_ENV: &str = "KCOT_API_KEY";
const MOCK_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    #[default]
    Mock,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub mode: GeneratorMode,
    /// Chat-completions URL.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_base_ms: u64,
    pub request_timeout_secs: u64,
    pub concurrency: usize,
    pub cache_dir: Option<PathBuf>,
    /// Minimum cosine between word bags for a candidate to be kept.
    pub mock_threshold: f64,
    /// Number of target tokens in a mock summary.
    pub mock_summary_len: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            mode: GeneratorMode::Mock,
            endpoint: None,
            model: None,
            temperature: 0.0,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            max_retries: 3,
            backoff_base_ms: 1000,
            request_timeout_secs: 120,
            concurrency: 4,
            cache_dir: None,
            mock_threshold: 0.2,
            mock_summary_len: 16,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            GeneratorMode::Mock => {
                if !(0.0..=1.0).contains(&self.mock_threshold) {
                    return Err(KcotError::Config(format!(
                        "mock_threshold must lie in [0, 1], got {}",
                        self.mock_threshold
                    )));
                }
                if self.mock_summary_len == 0 {
                    return Err(KcotError::Config("mock_summary_len must be positive".into()));
                }
            }
            GeneratorMode::Remote => {
                if self.endpoint.as_deref().is_none_or(str::is_empty) {
                    return Err(KcotError::Config("remote generator requires an endpoint".into()));
                }
                if self.model.as_deref().is_none_or(str::is_empty) {
                    return Err(KcotError::Config("remote generator requires a model".into()));
                }
                if self.temperature != 0.0 {
                    return Err(KcotError::Config("remote temperature is fixed at 0".into()));
                }
            }
        }
        if self.concurrency == 0 {
            return Err(KcotError::Config("concurrency must be at least 1".into()));
        }
        Ok(())
    }
}

/// Produces a thought for a rendered prompt.
pub trait ThoughtGenerator: Send + Sync {
    /// Identifies the generator and every setting that affects its output.
    fn id(&self) -> String;
    fn generate(&self, prompt: &str) -> Result<String>;
    /// Upper bound on simultaneous `generate` calls.
    fn concurrency(&self) -> usize {
        usize::MAX
    }
    /// Timestamp recorded in cache entries.
    fn timestamp(&self) -> String {
        MOCK_TIMESTAMP.into()
    }
}

/// Deterministic extractive stand-in for an LLM. Keeps candidates whose word
/// bag has cosine ≥ `threshold` with the target's ("assignment"), then emits
/// the target's `summary_len` most frequent tokens followed by tokens shared
/// between at least two of {target, kept candidates} ("update").
#[derive(Clone, Debug)]
pub struct MockGenerator {
    pub threshold: f64,
    pub summary_len: usize,
}

impl Default for MockGenerator {
    fn default() -> Self {
        MockGenerator {
            threshold: 0.2,
            summary_len: 16,
        }
    }
}

type Bag = BTreeMap<String, usize>;

fn bag(text: &str) -> Bag {
    let mut b = Bag::new();
    for t in tokenize(text) {
        *b.entry(t).or_default() += 1;
    }
    b
}

fn bag_cosine(a: &Bag, b: &Bag) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(k, &x)| b.get(k).map(|&y| (x * y) as f64))
        .sum();
    let na = a.values().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
    let nb = b.values().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl MockGenerator {
    /// Summary plus the indices of the retained candidates.
    pub fn summarize(&self, target: &str, candidates: &[String]) -> (String, Vec<usize>) {
        let tb = bag(target);
        let cbs: Vec<Bag> = candidates.iter().map(|c| bag(c)).collect();
        let kept: Vec<usize> = (0..cbs.len())
            .filter(|&i| bag_cosine(&tb, &cbs[i]) >= self.threshold)
            .collect();

        let mut by_freq: Vec<(&String, usize)> = tb.iter().map(|(k, &v)| (k, v)).collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let head: Vec<&String> = by_freq
            .iter()
            .take(self.summary_len)
            .map(|(k, _)| *k)
            .collect();
        let emitted: BTreeSet<&String> = head.iter().copied().collect();

        let mut doc_freq: BTreeMap<&String, usize> = BTreeMap::new();
        for b in std::iter::once(&tb).chain(kept.iter().map(|&i| &cbs[i])) {
            for k in b.keys() {
                *doc_freq.entry(k).or_default() += 1;
            }
        }
        let shared = doc_freq
            .into_iter()
            .filter(|(k, df)| *df >= 2 && !emitted.contains(k))
            .map(|(k, _)| k)
            .take(self.summary_len);

        let words: Vec<&str> = head.into_iter().chain(shared).map(String::as_str).collect();
        (words.join(" "), kept)
    }
}

impl ThoughtGenerator for MockGenerator {
    fn id(&self) -> String {
        format!("mock:theta={}:m={}", self.threshold, self.summary_len)
    }

    fn generate(&self, prompt: &str) -> Result<String> {
        if prompt.trim().is_empty() {
            return Err(KcotError::InvalidParameter("prompt is empty".into()));
        }
        Ok(match parse_prompt(prompt) {
            Ok(p) => self.summarize(&p.target, &p.candidates).0,
            Err(_) => self.summarize(prompt, &[]).0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

/// Sends one JSON request. Implementations report HTTP statuses in the
/// response and reserve `Err` for connection-level failures.
pub trait ChatTransport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &serde_json::Value)
        -> Result<TransportResponse>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| KcotError::Transport(e.to_string()))?;
        Ok(HttpTransport { client })
    }
}

impl ChatTransport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &serde_json::Value,
    ) -> Result<TransportResponse> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(bearer)
            .json(body)
            .send()
            .map_err(|e| KcotError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| KcotError::Transport(e.to_string()))?;
        Ok(TransportResponse { status, body })
    }
}

/// OpenAI-style chat-completions client.
pub struct RemoteGenerator {
    endpoint: String,
    model: String,
    api_key: String,
    max_retries: u32,
    backoff_base: Duration,
    concurrency: usize,
    transport: Arc<dyn ChatTransport>,
}

impl RemoteGenerator {
    /// Reads the credential immediately; a missing variable is a
    /// configuration error and no request is made.
    pub fn new(cfg: &GeneratorConfig, transport: Arc<dyn ChatTransport>) -> Result<Self> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| {
                KcotError::Config(format!(
                    "environment variable {} is not set",
                    cfg.api_key_env
                ))
            })?;
        Ok(RemoteGenerator {
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            model: cfg.model.clone().unwrap_or_default(),
            api_key,
            max_retries: cfg.max_retries,
            backoff_base: Duration::from_millis(cfg.backoff_base_ms),
            concurrency: cfg.concurrency,
            transport,
        })
    }

    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        })
    }

    fn extract(body: &str) -> Result<String> {
        let v: serde_json::Value = serde_json::from_str(body)
            .map_err(|e| KcotError::Transport(format!("unparseable response: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| KcotError::Transport("response lacks choices[0].message.content".into()))
    }
}

impl ThoughtGenerator for RemoteGenerator {
    fn id(&self) -> String {
        format!("remote:{}@{}", self.model, self.endpoint)
    }

    fn generate(&self, prompt: &str) -> Result<String> {
        if prompt.trim().is_empty() {
            return Err(KcotError::InvalidParameter("prompt is empty".into()));
        }
        let body = self.request_body(prompt);
        let mut attempt = 0;
        loop {
            let outcome = self.transport.post_json(&self.endpoint, &self.api_key, &body);
            let err = match outcome {
                Ok(r) if (200..300).contains(&r.status) => return Self::extract(&r.body),
                Ok(r) => KcotError::RemoteStatus {
                    status: r.status,
                    body: r.body.chars().take(512).collect(),
                },
                Err(e) => e,
            };
            if attempt >= self.max_retries {
                return Err(err);
            }
            let delay = self.backoff_base * 2u32.pow(attempt);
            log::warn!("remote generation failed ({err}); retrying in {delay:?}");
            std::thread::sleep(delay);
            attempt += 1;
        }
    }

    fn concurrency(&self) -> usize {
        self.concurrency
    }

    fn timestamp(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

/// Generator plus optional cache.
pub struct ThoughtEngine {
    generator: Box<dyn ThoughtGenerator>,
    cache: Option<ThoughtCache>,
}

impl ThoughtEngine {
    pub fn new(generator: Box<dyn ThoughtGenerator>, cache: Option<ThoughtCache>) -> Self {
        ThoughtEngine { generator, cache }
    }

    pub fn from_config(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let generator: Box<dyn ThoughtGenerator> = match cfg.mode {
            GeneratorMode::Mock => Box::new(MockGenerator {
                threshold: cfg.mock_threshold,
                summary_len: cfg.mock_summary_len,
            }),
            GeneratorMode::Remote => {
                let transport =
                    HttpTransport::new(Duration::from_secs(cfg.request_timeout_secs))?;
                Box::new(RemoteGenerator::new(cfg, Arc::new(transport))?)
            }
        };
        let cache = cfg.cache_dir.as_ref().map(ThoughtCache::open).transpose()?;
        Ok(ThoughtEngine::new(generator, cache))
    }

    /// Replaces the cache.
    pub fn with_cache(mut self, cache: Option<ThoughtCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn generator_id(&self) -> String {
        self.generator.id()
    }

    pub fn cache(&self) -> Option<&ThoughtCache> {
        self.cache.as_ref()
    }

    pub fn cache_key(&self, prompt: &str) -> String {
        cache_key(&self.generator.id(), prompt)
    }

    /// Served from the cache when possible; fresh responses are stored.
    pub fn generate(&self, prompt: &str) -> Result<String> {
        let id = self.generator.id();
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&id, prompt)? {
                return Ok(hit.response);
            }
        }
        let response = self.generator.generate(prompt)?;
        if let Some(cache) = &self.cache {
            cache.put(&CacheEntry {
                prompt: prompt.to_string(),
                response: response.clone(),
                generator_id: id,
                created_at: self.generator.timestamp(),
            })?;
        }
        Ok(response)
    }

    /// Responses in prompt order. Completed responses stay cached if a later
    /// prompt fails, so a rerun resumes where this one stopped.
    pub fn generate_all(&self, prompts: &[String]) -> Result<Vec<String>> {
        let run = || par::try_map_range(prompts.len(), |i| self.generate(&prompts[i]));
        match self.generator.concurrency() {
            usize::MAX => run(),
            limit => par::with_max_threads(limit, run),
        }
    }
}

/// One-shot generation through a freshly configured engine.
pub fn generate_thought(prompt: &str, cfg: &GeneratorConfig) -> Result<String> {
    ThoughtEngine::from_config(cfg)?.generate(prompt)
}
