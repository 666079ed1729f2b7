//! Uniform agent-call abstraction over model providers.
//!
//! A [`Client`] wraps one concrete [`Provider`] (live HTTP, scripted mock, or
//! transcript replay), enforces the `max_parallel` concurrency bound, and
//! appends every completed call to an append-only [`Transcript`].

mod http;
mod mock;
mod replay;

pub use http::HttpProvider;
pub use mock::{MockProvider, MockRule};
pub use replay::ReplayProvider;

use std::collections::HashMap;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};

/// One prompt sent to an agent role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub role_name: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output: u32,
    /// Opaque tag for humans reading transcripts; excluded from the digest.
    pub request_tag: String,
}

impl AgentRequest {
    pub fn new(role_name: &str, system_prompt: &str, user_prompt: &str) -> Self {
        AgentRequest {
            role_name: role_name.to_string(),
            system_prompt: system_prompt.to_string(),
            user_prompt: user_prompt.to_string(),
            temperature: 0.2,
            max_output: 4096,
            request_tag: String::new(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_tag(mut self, tag: &str) -> Self {
        self.request_tag = tag.to_string();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(Error::Invalid {
                what: "AgentRequest",
                reason: "prompts must be non-empty".into(),
            });
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Invalid {
                what: "AgentRequest",
                reason: format!("temperature {} outside [0.0, 2.0]", self.temperature),
            });
        }
        Ok(())
    }

    /// Canonical serialization used for transcript keying. The tag is left
    /// out so replay survives cosmetic re-tagging.
    pub fn canonical(&self) -> String {
        serde_json::json!({
            "role_name": self.role_name,
            "system_prompt": self.system_prompt,
            "user_prompt": self.user_prompt,
            "temperature": self.temperature,
        })
        .to_string()
    }

    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical().as_bytes());
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Live,
    Mock,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u32,
    pub output: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub text: String,
    pub model_id: String,
    pub latency_ms: u64,
    pub token_usage: TokenUsage,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    #[serde(rename = "http-openai-compatible", alias = "http")]
    HttpOpenaiCompatible,
    #[serde(rename = "mock")]
    Mock,
    #[serde(rename = "replay")]
    Replay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    pub model_id: String,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Transcript to load when kind = replay.
    #[serde(default)]
    pub replay_path: Option<PathBuf>,
    /// Optional JSON rule file installed into the mock before any call.
    #[serde(default)]
    pub mock_script_path: Option<PathBuf>,
}

fn default_max_parallel() -> usize {
    4
}
fn default_retry_limit() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}

impl BackendConfig {
    pub fn mock(seed: u64) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            base_url: None,
            model_id: "mock-model".into(),
            max_parallel: 4,
            retry_limit: 3,
            backoff_base_ms: 250,
            seed: Some(seed),
            replay_path: None,
            mock_script_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BackendKind::HttpOpenaiCompatible => {
                if self.base_url.is_none() {
                    return Err(Error::Config("base_url required for http backend".into()));
                }
                if self.seed.is_some() {
                    return Err(Error::Config("seed is only valid for the mock backend".into()));
                }
            }
            BackendKind::Mock => {
                if self.base_url.is_some() {
                    return Err(Error::Config("base_url only valid for http backend".into()));
                }
            }
            BackendKind::Replay => {
                if self.seed.is_some() {
                    return Err(Error::Config("seed is only valid for the mock backend".into()));
                }
                if self.replay_path.is_none() {
                    return Err(Error::Config("replay_path required for replay backend".into()));
                }
            }
        }
        if self.max_parallel == 0 {
            return Err(Error::Config("max_parallel must be >= 1".into()));
        }
        Ok(())
    }
}

/// Raw completion surface implemented per backend kind.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse>;
}

/// One line of the run transcript (JSONL on disk).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    pub role_name: String,
    pub request: AgentRequest,
    pub response: AgentResponse,
    pub provenance: Provenance,
    /// Logical clock; strictly increasing per run in append order.
    pub seq: u64,
    pub timestamp_ms: u64,
}

#[derive(Default)]
struct TranscriptState {
    entries: Vec<TranscriptEntry>,
    // digest -> canonical request, for within-run collision checking
    seen: HashMap<String, String>,
}

/// Append-only call log with internal synchronization.
#[derive(Default)]
pub struct Transcript {
    state: Mutex<TranscriptState>,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript::default()
    }

    fn append(&self, request: &AgentRequest, response: &AgentResponse) -> Result<()> {
        let digest = request.digest();
        let canonical = request.canonical();
        let mut state = self.state.lock().unwrap();
        if let Some(existing) = state.seen.get(&digest) {
            if existing != &canonical {
                return Err(Error::DigestCollision { digest });
            }
        } else {
            state.seen.insert(digest.clone(), canonical);
        }
        let seq = state.entries.len() as u64;
        state.entries.push(TranscriptEntry {
            digest,
            role_name: request.role_name.clone(),
            request: request.clone(),
            response: response.clone(),
            provenance: response.provenance,
            seq,
            timestamp_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        });
        Ok(())
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.state.lock().unwrap().entries.clone()
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::File::create(path)?;
        for entry in self.entries() {
            serde_json::to_writer(&mut file, &entry)?;
            file.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vec<TranscriptEntry>> {
        let file = std::fs::File::open(path)?;
        let mut entries = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        Ok(entries)
    }
}

/// Counting semaphore for the live-request concurrency bound.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

/// The agent-call entry point used by every pipeline.
///
/// Cloning shares the provider, transcript, and concurrency limiter.
#[derive(Clone)]
pub struct Client {
    provider: Arc<dyn Provider>,
    transcript: Arc<Transcript>,
    limiter: Arc<Semaphore>,
}

impl Client {
    pub fn new(provider: Arc<dyn Provider>, max_parallel: usize) -> Self {
        Client {
            provider,
            transcript: Arc::new(Transcript::new()),
            limiter: Arc::new(Semaphore::new(max_parallel.max(1))),
        }
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self> {
        config.validate()?;
        let provider: Arc<dyn Provider> = match config.kind {
            BackendKind::Mock => {
                let mock = MockProvider::new(config.seed.unwrap_or(0), &config.model_id);
                if let Some(path) = &config.mock_script_path {
                    let rules: Vec<MockRule> =
                        serde_json::from_str(&std::fs::read_to_string(path)?)?;
                    mock.install_script(rules);
                }
                Arc::new(mock)
            }
            BackendKind::Replay => {
                let path = config.replay_path.as_ref().unwrap();
                Arc::new(ReplayProvider::from_transcript(&Transcript::load(path)?))
            }
            BackendKind::HttpOpenaiCompatible => Arc::new(HttpProvider::new(
                config.base_url.clone().unwrap(),
                config.model_id.clone(),
                config.retry_limit,
                std::time::Duration::from_millis(config.backoff_base_ms),
            )),
        };
        Ok(Client::new(provider, config.max_parallel))
    }

    /// Issues one agent call under the concurrency bound and records it.
    pub fn complete(&self, request: &AgentRequest) -> Result<AgentResponse> {
        request.validate()?;
        self.limiter.acquire();
        let result = self.provider.complete(request);
        self.limiter.release();
        let response = result?;
        self.transcript.append(request, &response)?;
        Ok(response)
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }
}

/// Provider wrapper that records outgoing prompts and the peak number of
/// in-flight requests; used by tests asserting the clean-room and
/// bounded-concurrency properties.
pub struct RecordingProvider<P> {
    inner: P,
    requests: Mutex<Vec<AgentRequest>>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider {
            inner,
            requests: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn requests(&self) -> Vec<AgentRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        self.requests.lock().unwrap().push(request.clone());
        // hold the slot briefly so overlap is observable
        std::thread::sleep(std::time::Duration::from_millis(2));
        let result = self.inner.complete(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

/// Runs `f` over `items` with at most `max_parallel` worker threads,
/// returning results in input order.
pub fn parallel_map<T, R, F>(max_parallel: usize, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync,
{
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let workers = max_parallel.max(1).min(n);
    if workers == 1 {
        return items.into_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let slots: Vec<Mutex<Option<T>>> = items.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let item = slots[i].lock().unwrap().take().unwrap();
                let r = f(i, item);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().unwrap())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(role: &str, prompt: &str) -> AgentRequest {
        AgentRequest::new(role, "sys", prompt)
    }

    #[test]
    fn digest_ignores_tag() {
        let a = req("architect", "p").with_tag("one");
        let b = req("architect", "p").with_tag("two");
        assert_eq!(a.digest(), b.digest());
        let c = req("architect", "q");
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn mock_is_deterministic() {
        let config = BackendConfig::mock(42);
        let client1 = Client::from_config(&config).unwrap();
        let client2 = Client::from_config(&config).unwrap();
        let r = req("architect", "same prompt");
        assert_eq!(client1.complete(&r).unwrap().text, client2.complete(&r).unwrap().text);
        assert_eq!(
            client1.complete(&r).unwrap().text,
            client1.complete(&r).unwrap().text
        );
    }

    #[test]
    fn transcript_counts_every_call() {
        let client = Client::from_config(&BackendConfig::mock(1)).unwrap();
        for i in 0..5 {
            client.complete(&req("architect", &format!("p{i}"))).unwrap();
        }
        assert_eq!(client.transcript().len(), 5);
        let entries = client.transcript().entries();
        assert!(entries.windows(2).all(|w| w[0].seq < w[1].seq));
    }

    #[test]
    fn replay_roundtrip_and_miss() {
        let client = Client::from_config(&BackendConfig::mock(7)).unwrap();
        let r = req("validator", "judge this");
        let original = client.complete(&r).unwrap();

        let replay = ReplayProvider::from_transcript(&client.transcript().entries());
        let replay_client = Client::new(Arc::new(replay), 2);
        let replayed = replay_client.complete(&r).unwrap();
        assert_eq!(replayed.text, original.text);
        assert_eq!(replayed.provenance, Provenance::Replay);

        let miss = req("validator", "never recorded");
        let err = replay_client.complete(&miss).unwrap_err();
        match err {
            Error::ReplayMiss { digest } => assert_eq!(digest, miss.digest()),
            other => panic!("expected replay miss, got {other}"),
        }
    }

    #[test]
    fn concurrency_never_exceeds_bound() {
        let recorder = Arc::new(RecordingProvider::new(MockProvider::new(3, "m")));
        let client = Client::new(recorder.clone(), 3);
        let reqs: Vec<AgentRequest> = (0..24).map(|i| req("architect", &format!("p{i}"))).collect();
        parallel_map(8, reqs, |_, r| client.complete(&r).unwrap());
        assert!(recorder.peak_in_flight() <= 3, "peak {}", recorder.peak_in_flight());
    }

    #[test]
    fn parallel_map_preserves_order() {
        let out = parallel_map(4, (0..100).collect::<Vec<i32>>(), |_, x| x * 2);
        assert_eq!(out, (0..100).map(|x| x * 2).collect::<Vec<i32>>());
    }

    #[test]
    fn config_validation() {
        let mut config = BackendConfig::mock(1);
        config.base_url = Some("http://x".into());
        assert!(config.validate().is_err());

        let http = BackendConfig {
            kind: BackendKind::HttpOpenaiCompatible,
            base_url: None,
            model_id: "m".into(),
            max_parallel: 1,
            retry_limit: 0,
            backoff_base_ms: 1,
            seed: None,
            replay_path: None,
            mock_script_path: None,
        };
        assert!(http.validate().is_err(), "http requires base_url");
    }

    #[test]
    fn transcript_save_load() {
        let client = Client::from_config(&BackendConfig::mock(9)).unwrap();
        client.complete(&req("architect", "x")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcript.jsonl");
        client.transcript().save(&path).unwrap();
        let loaded = Transcript::load(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].digest, req("architect", "x").digest());
    }
}
