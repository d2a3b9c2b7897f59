//! Batched, cached, retried calls to an external text-generation endpoint.
//!
//! Used twice in the pipeline: to obtain LLM-instructed distortions, and to
//! rewrite raw annotations with a trained rewriter. The endpoint is any service
//! speaking `POST /generate {"prompt", "images", "max_new_tokens"} -> {"text"}`.
//!
//! Results are cached on disk, one file per content-addressed key, so a
//! million-sample run can be resumed and a warm re-run makes no endpoint calls.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::InstructionSample;
use crate::distortion::prompt::{ASSISTANT_MARKER, HUMAN_MARKER, SYSTEM_MESSAGE};

pub const IMAGE_PLACEHOLDER: &str = "<image>";
pub const END_OF_SEQUENCE: &str = "<EOS>";

/// Rewrite instruction appended after the draft. This wording is our own convention.
pub const REWRITE_INSTRUCTION: &str = "Rewrite the draft response above into a polite, detailed and coherent answer. Keep every fact it states and do not contradict it.";

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GatewayError {
    #[error("sample {0:?} has no raw annotation to rewrite")]
    MissingRawAnnotation(String),
    #[error("sample {sample_id:?}: endpoint unreachable after {attempts} attempt(s): {message}")]
    EndpointUnreachable {
        sample_id: String,
        attempts: u32,
        message: String,
    },
    #[error("sample {sample_id:?}: malformed endpoint response: {message}")]
    MalformedResponse { sample_id: String, message: String },
    #[error("sample {0:?}: not cached and no endpoint configured")]
    CacheMiss(String),
    #[error("cache i/o: {0}")]
    Cache(String),
}

impl GatewayError {
    pub fn sample_id(&self) -> Option<&str> {
        match self {
            GatewayError::MissingRawAnnotation(id) | GatewayError::CacheMiss(id) => Some(id),
            GatewayError::EndpointUnreachable { sample_id, .. }
            | GatewayError::MalformedResponse { sample_id, .. } => Some(sample_id),
            GatewayError::Cache(_) => None,
        }
    }
}

/// Assemble the rewrite prompt: instruction with one image placeholder per image,
/// then the raw annotation as a draft to polish, ending on the open assistant turn.
pub fn assemble_rewrite_prompt(sample: &InstructionSample) -> Result<String, GatewayError> {
    let raw = sample
        .raw_annotation
        .as_deref()
        .ok_or_else(|| GatewayError::MissingRawAnnotation(sample.id.clone()))?;
    Ok(render_rewrite_prompt(sample, raw))
}

fn render_rewrite_prompt(sample: &InstructionSample, draft: &str) -> String {
    let images = IMAGE_PLACEHOLDER.repeat(sample.images.len());
    format!(
        "{SYSTEM_MESSAGE}\n{HUMAN_MARKER} {images}{}\nDraft response:\n{draft}\n{REWRITE_INSTRUCTION}\n{ASSISTANT_MARKER} ",
        sample.instruction
    )
}

/// A rewriter training example: the distorted response takes the draft slot and
/// the original response is the target. Loss applies to `target` only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriterExample {
    pub sample_id: String,
    pub prompt: String,
    pub target: String,
    pub image_uris: Vec<String>,
}

pub fn rewriter_training_example(sample: &InstructionSample, distorted: &str, original: &str) -> RewriterExample {
    RewriterExample {
        sample_id: sample.id.clone(),
        prompt: render_rewrite_prompt(sample, distorted),
        target: format!("{original}{END_OF_SEQUENCE}"),
        image_uris: sample.images.iter().map(|i| i.uri.clone()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRequest {
    pub sample_id: String,
    pub prompt: String,
    pub image_uris: Vec<String>,
    pub max_new_tokens: u32,
    pub cache_key: String,
}

impl RewriteRequest {
    pub fn new(
        sample_id: impl Into<String>,
        prompt: impl Into<String>,
        image_uris: Vec<String>,
        max_new_tokens: u32,
        endpoint_id: &str,
    ) -> Self {
        let prompt = prompt.into();
        let cache_key = cache_key(&prompt, &image_uris, endpoint_id);
        RewriteRequest {
            sample_id: sample_id.into(),
            prompt,
            image_uris,
            max_new_tokens,
            cache_key,
        }
    }

    pub fn for_sample(sample: &InstructionSample, max_new_tokens: u32, endpoint_id: &str) -> Result<Self, GatewayError> {
        let prompt = assemble_rewrite_prompt(sample)?;
        let uris = sample.images.iter().map(|i| i.uri.clone()).collect();
        Ok(Self::new(sample.id.clone(), prompt, uris, max_new_tokens, endpoint_id))
    }
}

/// Hex SHA-256 over the length-prefixed prompt, image URIs and endpoint id.
pub fn cache_key(prompt: &str, image_uris: &[String], endpoint_id: &str) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(prompt.as_bytes());
    field(&(image_uris.len() as u64).to_le_bytes());
    for uri in image_uris {
        field(uri.as_bytes());
    }
    field(endpoint_id.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteResult {
    pub sample_id: String,
    pub rewritten: String,
    pub latency_ms: u64,
    pub from_cache: bool,
    pub endpoint_id: String,
}

/// One file per key under a directory. Writes go through a temp file and rename.
#[derive(Debug)]
pub struct DiskCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DiskCache {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub fn get(&self, key: &str) -> io::Result<Option<String>> {
        match fs::read_to_string(self.path(key)) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, key: &str, text: &str) -> io::Result<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let tmp = self.dir.join(format!(".{key}.tmp"));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        fs::rename(tmp, self.path(key))
    }
}

/// Body of `POST /generate`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub images: Vec<String>,
    pub max_new_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EndpointError {
    /// Connection failures, timeouts and gateway-level 502/503/504. Retried.
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed: {0}")]
    Malformed(String),
}

pub trait GenerationEndpoint: Send + Sync {
    fn endpoint_id(&self) -> &str;
    fn generate(&self, request: &GenerateRequest) -> Result<String, EndpointError>;
}

pub struct HttpEndpoint {
    url: String,
    endpoint_id: String,
    bearer_token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    /// `base_url` without the `/generate` suffix. `endpoint_id` defaults to the URL.
    pub fn new(
        base_url: &str,
        endpoint_id: Option<String>,
        bearer_token: Option<String>,
        timeout: Duration,
    ) -> Result<Self, EndpointError> {
        let base = base_url.trim_end_matches('/');
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        Ok(HttpEndpoint {
            url: format!("{base}/generate"),
            endpoint_id: endpoint_id.unwrap_or_else(|| base.to_string()),
            bearer_token,
            client,
        })
    }
}

impl GenerationEndpoint for HttpEndpoint {
    fn endpoint_id(&self) -> &str {
        &self.endpoint_id
    }

    fn generate(&self, request: &GenerateRequest) -> Result<String, EndpointError> {
        let mut builder = self.client.post(&self.url).json(request);
        if let Some(token) = &self.bearer_token {
            builder = builder.bearer_auth(token);
        }
        let resp = builder
            .send()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if matches!(status, 502..=504) {
            return Err(EndpointError::Transport(format!("HTTP {status}")));
        }
        if status != 200 {
            return Err(EndpointError::Malformed(format!("HTTP {status}")));
        }
        let body = resp
            .text()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let parsed: GenerateResponse =
            serde_json::from_str(&body).map_err(|e| EndpointError::Malformed(e.to_string()))?;
        Ok(parsed.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_new_tokens: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            max_in_flight: 8,
            max_retries: 3,
            backoff_base_ms: 500,
            max_new_tokens: 512,
        }
    }
}

pub type RewriteOutcome = Result<RewriteResult, GatewayError>;

pub struct RewriteGateway {
    endpoint: Option<Arc<dyn GenerationEndpoint>>,
    endpoint_id: String,
    cache: Option<DiskCache>,
    config: GatewayConfig,
    endpoint_calls: AtomicUsize,
}

impl RewriteGateway {
    pub fn new(endpoint: Arc<dyn GenerationEndpoint>, cache: Option<DiskCache>, config: GatewayConfig) -> Self {
        RewriteGateway {
            endpoint_id: endpoint.endpoint_id().to_string(),
            endpoint: Some(endpoint),
            cache,
            config,
            endpoint_calls: AtomicUsize::new(0),
        }
    }

    /// Serve from the cache only; misses are errors.
    pub fn cache_only(endpoint_id: impl Into<String>, cache: DiskCache, config: GatewayConfig) -> Self {
        RewriteGateway {
            endpoint: None,
            endpoint_id: endpoint_id.into(),
            cache: Some(cache),
            config,
            endpoint_calls: AtomicUsize::new(0),
        }
    }

    pub fn endpoint_id(&self) -> &str {
        &self.endpoint_id
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Endpoint calls made so far, retries included.
    pub fn endpoint_calls(&self) -> usize {
        self.endpoint_calls.load(Ordering::SeqCst)
    }

    pub fn request_for(&self, sample: &InstructionSample) -> Result<RewriteRequest, GatewayError> {
        RewriteRequest::for_sample(sample, self.config.max_new_tokens, &self.endpoint_id)
    }

    pub fn request(&self, sample_id: &str, prompt: &str, image_uris: Vec<String>) -> RewriteRequest {
        RewriteRequest::new(sample_id, prompt, image_uris, self.config.max_new_tokens, &self.endpoint_id)
    }

    fn process(&self, req: RewriteRequest) -> RewriteOutcome {
        let started = Instant::now();
        if let Some(cache) = &self.cache {
            if let Some(text) = cache
                .get(&req.cache_key)
                .map_err(|e| GatewayError::Cache(e.to_string()))?
            {
                return Ok(RewriteResult {
                    sample_id: req.sample_id,
                    rewritten: text,
                    latency_ms: started.elapsed().as_millis() as u64,
                    from_cache: true,
                    endpoint_id: self.endpoint_id.clone(),
                });
            }
        }
        let endpoint = self
            .endpoint
            .as_ref()
            .ok_or_else(|| GatewayError::CacheMiss(req.sample_id.clone()))?;
        let body = GenerateRequest {
            prompt: req.prompt,
            images: req.image_uris,
            max_new_tokens: req.max_new_tokens,
        };
        let mut attempt = 0u32;
        let text = loop {
            attempt += 1;
            self.endpoint_calls.fetch_add(1, Ordering::SeqCst);
            match endpoint.generate(&body) {
                Ok(text) => break text,
                Err(EndpointError::Transport(message)) => {
                    if attempt > self.config.max_retries {
                        return Err(GatewayError::EndpointUnreachable {
                            sample_id: req.sample_id,
                            attempts: attempt,
                            message,
                        });
                    }
                    let backoff = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1));
                    thread::sleep(Duration::from_millis(backoff));
                }
                Err(EndpointError::Malformed(message)) => {
                    return Err(GatewayError::MalformedResponse {
                        sample_id: req.sample_id,
                        message,
                    })
                }
            }
        };
        let text = text.trim().to_string();
        if text.is_empty() {
            return Err(GatewayError::MalformedResponse {
                sample_id: req.sample_id,
                message: "empty text".into(),
            });
        }
        if let Some(cache) = &self.cache {
            cache
                .put(&req.cache_key, &text)
                .map_err(|e| GatewayError::Cache(e.to_string()))?;
        }
        Ok(RewriteResult {
            sample_id: req.sample_id,
            rewritten: text,
            latency_ms: started.elapsed().as_millis() as u64,
            from_cache: false,
            endpoint_id: self.endpoint_id.clone(),
        })
    }

    /// Run every request with at most `max_in_flight` concurrent endpoint calls.
    ///
    /// `on_result` runs on the calling thread, once per request, in completion
    /// order.
    pub fn batch_rewrite<I>(&self, requests: I, mut on_result: impl FnMut(RewriteOutcome))
    where
        I: IntoIterator<Item = RewriteRequest>,
        I::IntoIter: Send,
    {
        let queue = Mutex::new(requests.into_iter());
        let (tx, rx) = mpsc::channel();
        thread::scope(|scope| {
            for _ in 0..self.config.max_in_flight.max(1) {
                let tx = tx.clone();
                let queue = &queue;
                scope.spawn(move || loop {
                    let next = queue.lock().unwrap_or_else(|p| p.into_inner()).next();
                    let Some(req) = next else { break };
                    if tx.send(self.process(req)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for outcome in rx {
                on_result(outcome);
            }
        });
    }

    /// Collect all outcomes, ordered by sample id.
    pub fn batch_rewrite_collect<I>(&self, requests: I) -> Vec<RewriteOutcome>
    where
        I: IntoIterator<Item = RewriteRequest>,
        I::IntoIter: Send,
    {
        let mut out = Vec::new();
        self.batch_rewrite(requests, |o| out.push(o));
        out.sort_by(|a, b| outcome_id(a).cmp(outcome_id(b)));
        out
    }
}

fn outcome_id(o: &RewriteOutcome) -> &str {
    match o {
        Ok(r) => &r.sample_id,
        Err(e) => e.sample_id().unwrap_or(""),
    }
}
