//! Language-model access: a remote completion client, an offline fixture
//! provider, and a response cache that wraps either.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::hashing::canonical_hash;
use crate::{Error, Result};

pub const API_KEY_ENV: &str = "GIST_API_KEY";
pub const ENDPOINT_ENV: &str = "GIST_LLM_ENDPOINT";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.7,
            top_p: 1.0,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub params: SamplingParams,
    /// Distinguishes repeated completions of the same prompt.
    pub sample_index: u32,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, params: SamplingParams, sample_index: u32) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            params,
            sample_index,
        }
    }

    pub fn hash(&self, model_id: &str) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            model_id: &'a str,
            request: &'a CompletionRequest,
        }
        canonical_hash(&Keyed {
            model_id,
            request: self,
        })
    }
}

pub trait CaptionProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
}

/// Canned responses keyed by exact prompt text.
///
/// The fixture file is JSON Lines of `{"prompt": ..., "completions": [...]}`.
/// Request `sample_index` selects a completion; an index past the end yields
/// an empty response. An unknown prompt is a provider failure.
#[derive(Debug, Clone, Default)]
pub struct FixtureProvider {
    model_id: String,
    responses: HashMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub prompt: String,
    pub completions: Vec<String>,
}

impl FixtureProvider {
    pub fn new(model_id: impl Into<String>) -> Self {
        FixtureProvider {
            model_id: model_id.into(),
            responses: HashMap::new(),
        }
    }

    pub fn insert(&mut self, prompt: impl Into<String>, completions: Vec<String>) {
        self.responses.entry(prompt.into()).or_default().extend(completions);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut p = FixtureProvider::new(format!("fixture:{}", path.display()));
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            p.insert(entry.prompt, entry.completions);
        }
        Ok(p)
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }
}

impl CaptionProvider for FixtureProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let completions = self
            .responses
            .get(&request.prompt)
            .ok_or_else(|| Error::Provider(format!("no fixture for prompt {:?}", request.prompt)))?;
        Ok(completions
            .get(request.sample_index as usize)
            .cloned()
            .unwrap_or_default())
    }
}

/// OpenAI-compatible chat completion client.
pub struct RemoteProvider {
    model_id: String,
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
    pub max_retries: u32,
    pub backoff: Duration,
}

impl RemoteProvider {
    /// Reads the API key from `GIST_API_KEY` and the endpoint from
    /// `GIST_LLM_ENDPOINT` (falling back to the public OpenAI URL).
    pub fn from_env(model_id: impl Into<String>) -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::Config(format!("{API_KEY_ENV} is not set")))?;
        let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| DEFAULT_ENDPOINT.to_string());
        Ok(Self::new(model_id, endpoint, api_key))
    }

    pub fn new(model_id: impl Into<String>, endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        RemoteProvider {
            model_id: model_id.into(),
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            agent,
            max_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }

    fn request_body(&self, request: &CompletionRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
        });
        if let Some(max) = request.params.max_tokens {
            body["max_tokens"] = max.into();
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, String> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| e.to_string())?;
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| format!("response without choices[0].message.content: {v}"))
    }
}

impl CaptionProvider for RemoteProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let body = self.request_body(request);
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("completion attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(Error::Provider(format!(
            "{} failed after {} attempts: {last}",
            self.endpoint,
            self.max_retries + 1
        )))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CachedResponse {
    model_id: String,
    request: CompletionRequest,
    response: String,
}

/// Response cache in front of any provider. Each response is one file,
/// `<dir>/<request hash>.json`, holding the request and response bodies.
/// Files are written to a temporary name and renamed into place, so
/// concurrent readers never observe partial entries.
pub struct CachedProvider<P> {
    inner: P,
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<P: CaptionProvider> CachedProvider<P> {
    pub fn new(inner: P, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(CachedProvider {
            inner,
            dir,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    fn entry_path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }
}

impl<P: CaptionProvider> CaptionProvider for CachedProvider<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let hash = request.hash(self.inner.model_id());
        let path = self.entry_path(&hash);
        if let Ok(text) = fs::read_to_string(&path) {
            match serde_json::from_str::<CachedResponse>(&text) {
                Ok(c) if c.request == *request => {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(c.response);
                }
                _ => log::warn!("ignoring unreadable cache entry {}", path.display()),
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let response = self.inner.complete(request)?;
        let entry = CachedResponse {
            model_id: self.inner.model_id().to_string(),
            request: request.clone(),
            response: response.clone(),
        };
        let tmp = self.dir.join(format!(
            ".{hash}.{}.{:?}.tmp",
            std::process::id(),
            std::thread::current().id()
        ));
        fs::write(&tmp, serde_json::to_string_pretty(&entry)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(response)
    }
}

impl<P: CaptionProvider + ?Sized> CaptionProvider for Box<P> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        (**self).complete(request)
    }
}

impl<P: CaptionProvider + ?Sized> CaptionProvider for &P {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        (**self).complete(request)
    }
}
