//! Instruction ingestion: line-delimited fixture files for offline runs and
//! a small JSON-over-HTTP client for a remote instruction service.
//!
//! Wire format: `POST {base_url}` with body
//! `{"sample_id", "kind", "script", "video_ref", "prompt"}`; the reply is
//! `{"sample_id", "text"}`. Transport failures, timeouts, 429 and 5xx are
//! retried with exponential backoff; other statuses and malformed or empty
//! replies fail immediately.
//!
//! Cache layout: `<cache_dir>/<kind>/<sample_id>-<prompt hash>.json`, one
//! reply per file. [`CACHE_DIR_ENV`] overrides the configured directory.

pub mod stub;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::textfront::{InstructionKind, InstructionRecord, InstructionSource};

pub const CACHE_DIR_ENV: &str = "DUBALIGN_CACHE_DIR";

/// Prompt strings sent alongside each request. The defaults are
/// placeholders meant to be replaced per deployment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptTemplates {
    pub prompt_dur: String,
    pub prompt_emo: String,
    pub prompt_entity: String,
    pub prompt_a: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            prompt_dur: "[placeholder] Describe the speaking rate of the speaker in this clip in one sentence.".into(),
            prompt_emo: "[placeholder] Describe the emotion conveyed by the speaker in this clip in one sentence.".into(),
            prompt_entity: "[placeholder] List the emotions present, chosen from: happy, angry, disgust, fear, neutral, sad, surprise.".into(),
            prompt_a: "[placeholder] Extract the emotion labels mentioned in the following description.".into(),
        }
    }
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prompt_dur", &self.prompt_dur),
            ("prompt_emo", &self.prompt_emo),
            ("prompt_entity", &self.prompt_entity),
            ("prompt_a", &self.prompt_a),
        ] {
            if v.trim().is_empty() {
                return Err(Error::Config(format!("prompt template `{name}` is empty")));
            }
        }
        Ok(())
    }

    pub fn for_kind(&self, kind: InstructionKind) -> &str {
        match kind {
            InstructionKind::Duration => &self.prompt_dur,
            InstructionKind::Emotion => &self.prompt_emo,
        }
    }
}

/// `provider.*` configuration keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub url: String,
    pub timeout_ms: u64,
    pub retries: u32,
    pub parallel: usize,
    /// First backoff delay; doubled after every failed attempt.
    pub backoff_ms: u64,
    pub cache_dir: Option<PathBuf>,
    pub prompts: PromptTemplates,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080/instruction".into(),
            timeout_ms: 30_000,
            retries: 3,
            parallel: 4,
            backoff_ms: 200,
            cache_dir: None,
            prompts: PromptTemplates::default(),
        }
    }
}

impl ProviderConfig {
    pub fn endpoint(&self) -> Result<RemoteEndpoint> {
        let ep = RemoteEndpoint {
            base_url: self.url.clone(),
            timeout: Duration::from_millis(self.timeout_ms),
            max_retries: self.retries,
            max_parallel: self.parallel,
            backoff: Duration::from_millis(self.backoff_ms),
        };
        ep.validate()?;
        Ok(ep)
    }

    /// The configured cache directory, unless [`CACHE_DIR_ENV`] is set.
    pub fn resolved_cache_dir(&self) -> Option<PathBuf> {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
            _ => self.cache_dir.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemoteEndpoint {
    pub base_url: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_parallel: usize,
    pub backoff: Duration,
}

impl RemoteEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            max_parallel: 4,
            backoff: Duration::from_millis(200),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::Config("provider timeout must be positive".into()));
        }
        if self.max_parallel == 0 {
            return Err(Error::Config("provider parallelism must be at least 1".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::Config(format!(
                "endpoint `{}` is not an http(s) URL",
                self.base_url
            )));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    sample_id: String,
    kind: InstructionKind,
    text: String,
}

/// Parses fixture text; `path` only labels errors.
pub fn parse_fixtures(text: &str, path: &Path) -> Result<Vec<InstructionRecord>> {
    let fail = |line: usize, message: String| Error::Fixture {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: FixtureLine = serde_json::from_str(raw).map_err(|e| fail(n, e.to_string()))?;
        let rec = InstructionRecord::new(line.sample_id, line.kind, line.text, InstructionSource::Fixture)
            .map_err(|e| fail(n, e.to_string()))?;
        if !seen.insert((rec.sample_id.clone(), rec.kind)) {
            return Err(fail(
                n,
                format!("duplicate {} instruction for `{}`", rec.kind.as_str(), rec.sample_id),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads a fixture file: one `{"sample_id", "kind", "text"}` object per
/// line, blank lines skipped.
pub fn load_fixtures(path: &Path) -> Result<Vec<InstructionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fixtures(&text, path)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchRequest {
    pub sample_id: String,
    pub kind: InstructionKind,
    pub script: String,
    pub video_ref: String,
    pub prompt: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchResponse {
    pub sample_id: String,
    pub text: String,
}

/// One (sample, kind) to fetch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchJob {
    pub sample_id: String,
    pub kind: InstructionKind,
    pub script: String,
    pub video_ref: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fetched {
    pub record: InstructionRecord,
    /// Failed attempts before the one that succeeded.
    pub retries: u32,
    pub from_cache: bool,
}

/// Hex SHA-256 of a prompt, truncated to 16 characters.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    hex::encode(&digest[..8])
}

fn check_id(id: &str) -> Result<()> {
    let ok =
        !id.is_empty() && id != "." && id != ".." && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(invalid!("sample_id `{id}` cannot be used as a cache key"))
    }
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, sample_id: &str, kind: InstructionKind, prompt: &str) -> Result<PathBuf> {
        check_id(sample_id)?;
        Ok(self
            .dir
            .join(kind.as_str())
            .join(format!("{sample_id}-{}.json", prompt_hash(prompt))))
    }

    pub fn get(&self, sample_id: &str, kind: InstructionKind, prompt: &str) -> Result<Option<FetchResponse>> {
        let path = self.path_for(sample_id, kind, prompt)?;
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn put(&self, kind: InstructionKind, prompt: &str, resp: &FetchResponse) -> Result<()> {
        let path = self.path_for(&resp.sample_id, kind, prompt)?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let parent = path.parent().expect("cache paths have a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(resp)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

pub struct RemoteProvider {
    endpoint: RemoteEndpoint,
    prompts: PromptTemplates,
    cache: Option<ResponseCache>,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(endpoint: RemoteEndpoint, prompts: PromptTemplates, cache: Option<ResponseCache>) -> Result<Self> {
        endpoint.validate()?;
        prompts.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            endpoint,
            prompts,
            cache,
            agent,
        })
    }

    pub fn from_config(cfg: &ProviderConfig) -> Result<Self> {
        let cache = cfg.resolved_cache_dir().map(ResponseCache::new);
        Self::new(cfg.endpoint()?, cfg.prompts.clone(), cache)
    }

    pub fn endpoint(&self) -> &RemoteEndpoint {
        &self.endpoint
    }

    fn attempt(&self, req: &FetchRequest) -> std::result::Result<FetchResponse, Attempt> {
        let mut resp = match self.agent.post(&self.endpoint.base_url).send_json(req) {
            Ok(r) => r,
            Err(e) => return Err(Attempt::Retry(e.to_string())),
        };
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("server returned status {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(Error::Protocol(format!(
                "server returned status {status}"
            ))));
        }
        let body: FetchResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(Error::Protocol(format!("malformed reply: {e}"))))?;
        if body.sample_id != req.sample_id {
            return Err(Attempt::Fatal(Error::Protocol(format!(
                "reply for `{}` answers `{}`",
                req.sample_id, body.sample_id
            ))));
        }
        if body.text.trim().is_empty() {
            return Err(Attempt::Fatal(Error::Protocol(format!(
                "empty instruction text for `{}`",
                req.sample_id
            ))));
        }
        Ok(body)
    }

    /// Fetches one instruction, consulting and filling the cache.
    pub fn fetch(&self, job: &FetchJob) -> Result<Fetched> {
        let prompt = self.prompts.for_kind(job.kind);
        let record = |text: String| InstructionRecord::new(&job.sample_id, job.kind, text, InstructionSource::Remote);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&job.sample_id, job.kind, prompt)? {
                return Ok(Fetched {
                    record: record(hit.text)?,
                    retries: 0,
                    from_cache: true,
                });
            }
        }
        let req = FetchRequest {
            sample_id: job.sample_id.clone(),
            kind: job.kind,
            script: job.script.clone(),
            video_ref: job.video_ref.clone(),
            prompt: prompt.to_string(),
        };
        let mut delay = self.endpoint.backoff;
        let mut last = String::new();
        for attempt in 0..=self.endpoint.max_retries {
            if attempt > 0 {
                log::warn!("retrying `{}` ({}) after: {last}", job.sample_id, job.kind.as_str());
                std::thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
            match self.attempt(&req) {
                Ok(resp) => {
                    if let Some(cache) = &self.cache {
                        cache.put(job.kind, prompt, &resp)?;
                    }
                    return Ok(Fetched {
                        record: record(resp.text)?,
                        retries: attempt,
                        from_cache: false,
                    });
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(Error::Fetch {
            attempts: self.endpoint.max_retries + 1,
            message: last,
        })
    }

    /// Fetches every job with at most `max_parallel` requests in flight.
    /// Results come back in job order.
    pub fn fetch_all(&self, jobs: &[FetchJob]) -> Vec<Result<Fetched>> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Fetched>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.endpoint.max_parallel.min(jobs.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(i) else { break };
                    let r = self.fetch(job);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every job ran"))
            .collect()
    }
}

/// Single uncached fetch.
pub fn fetch_instruction(
    endpoint: &RemoteEndpoint,
    sample_id: &str,
    kind: InstructionKind,
    script: &str,
    video_ref: &str,
    templates: &PromptTemplates,
) -> Result<InstructionRecord> {
    let provider = RemoteProvider::new(endpoint.clone(), templates.clone(), None)?;
    let job = FetchJob {
        sample_id: sample_id.to_string(),
        kind,
        script: script.to_string(),
        video_ref: video_ref.to_string(),
    };
    Ok(provider.fetch(&job)?.record)
}
