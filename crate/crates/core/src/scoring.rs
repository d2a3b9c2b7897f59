//! Scorer interface for the model-based filters and evaluators.
//!
//! Four scorer kinds (sentence similarity, NLI, CLIPScore, reward) share one
//! request/response shape. [`StubScorer`] serves fixed tables for tests and dry
//! runs; [`HttpScorer`] talks to the scoring sidecar. Both implement
//! [`ScoreBackend`] and are interchangeable behind a [`ScorerHandle`].
//!
//! Wire format, `POST {base}/{kind}`:
//!
//! ```text
//! {"kind":"sts","texts":["a","b"]}                  -> {"score":0.83,"model_id":"..."}
//! {"kind":"nli","texts":["premise","hypothesis"]}   -> {"label":"entailment","model_id":"..."}
//! {"kind":"clipscore","text":"...","image_uri":"..."} -> {"score":21.4,"model_id":"..."}
//! {"kind":"reward","instruction":"...","response":"..."} -> {"score":-1.7,"model_id":"..."}
//! ```
//!
//! Errors: 400 malformed body, 422 stub-table miss, 503 model not loaded.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Sts,
    Nli,
    Clipscore,
    Reward,
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Sts => "sts",
            ScorerKind::Nli => "nli",
            ScorerKind::Clipscore => "clipscore",
            ScorerKind::Reward => "reward",
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScoreRequest {
    Sts { texts: [String; 2] },
    Nli { texts: [String; 2] },
    Clipscore { text: String, image_uri: String },
    Reward { instruction: String, response: String },
}

impl ScoreRequest {
    pub fn kind(&self) -> ScorerKind {
        match self {
            ScoreRequest::Sts { .. } => ScorerKind::Sts,
            ScoreRequest::Nli { .. } => ScorerKind::Nli,
            ScoreRequest::Clipscore { .. } => ScorerKind::Clipscore,
            ScoreRequest::Reward { .. } => ScorerKind::Reward,
        }
    }

    pub fn sts(a: &str, b: &str) -> Self {
        ScoreRequest::Sts {
            texts: [a.to_string(), b.to_string()],
        }
    }

    pub fn nli(premise: &str, hypothesis: &str) -> Self {
        ScoreRequest::Nli {
            texts: [premise.to_string(), hypothesis.to_string()],
        }
    }

    pub fn clipscore(text: &str, image_uri: &str) -> Self {
        ScoreRequest::Clipscore {
            text: text.to_string(),
            image_uri: image_uri.to_string(),
        }
    }

    pub fn reward(instruction: &str, response: &str) -> Self {
        ScoreRequest::Reward {
            instruction: instruction.to_string(),
            response: response.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<NliLabel>,
    pub model_id: String,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ScorerError {
    #[error("scorer unavailable: {0}")]
    Unavailable(String),
    #[error("stub table has no entry for {0}")]
    StubMiss(String),
    #[error("malformed scorer exchange: {0}")]
    Malformed(String),
    #[error("expected a {expected} scorer, got {got}")]
    WrongKind { expected: ScorerKind, got: ScorerKind },
}

impl ScorerError {
    /// HTTP status the scoring service uses for this error.
    pub fn status(&self) -> u16 {
        match self {
            ScorerError::Malformed(_) | ScorerError::WrongKind { .. } => 400,
            ScorerError::StubMiss(_) => 422,
            ScorerError::Unavailable(_) => 503,
        }
    }
}

/// Anything that can answer a [`ScoreRequest`].
pub trait ScoreBackend: Send + Sync {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError>;
}

impl<T: ScoreBackend + ?Sized> ScoreBackend for Arc<T> {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        (**self).score(request)
    }
}

/// A backend bound to one scorer kind.
#[derive(Clone)]
pub struct ScorerHandle {
    kind: ScorerKind,
    backend: Arc<dyn ScoreBackend>,
}

impl fmt::Debug for ScorerHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScorerHandle").field("kind", &self.kind).finish()
    }
}

impl ScorerHandle {
    pub fn new(kind: ScorerKind, backend: Arc<dyn ScoreBackend>) -> Self {
        ScorerHandle { kind, backend }
    }

    pub fn kind(&self) -> ScorerKind {
        self.kind
    }

    pub fn expect_kind(&self, expected: ScorerKind) -> Result<(), ScorerError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(ScorerError::WrongKind {
                expected,
                got: self.kind,
            })
        }
    }

    fn call(&self, request: ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        self.expect_kind(request.kind())?;
        self.backend.score(&request)
    }

    fn numeric(&self, request: ScoreRequest) -> Result<f64, ScorerError> {
        let kind = request.kind();
        let score = self
            .call(request)?
            .score
            .ok_or_else(|| ScorerError::Malformed(format!("{kind} response without score")))?;
        if !score.is_finite() {
            return Err(ScorerError::Malformed(format!("{kind} score is not finite")));
        }
        Ok(score)
    }

    pub fn sts(&self, a: &str, b: &str) -> Result<f64, ScorerError> {
        self.numeric(ScoreRequest::sts(a, b))
    }

    pub fn clipscore(&self, text: &str, image_uri: &str) -> Result<f64, ScorerError> {
        self.numeric(ScoreRequest::clipscore(text, image_uri))
    }

    pub fn reward(&self, instruction: &str, response: &str) -> Result<f64, ScorerError> {
        self.numeric(ScoreRequest::reward(instruction, response))
    }

    pub fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliLabel, ScorerError> {
        self.call(ScoreRequest::nli(premise, hypothesis))?
            .label
            .ok_or_else(|| ScorerError::Malformed("nli response without label".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub texts: [String; 2],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub texts: [String; 2],
    pub label: NliLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTextScore {
    pub text: String,
    pub image_uri: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    pub instruction: String,
    pub response: String,
    pub score: f64,
}

/// Fallback answers for requests missing from the tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubDefaults {
    #[serde(default)]
    pub sts: Option<f64>,
    #[serde(default)]
    pub nli: Option<NliLabel>,
    #[serde(default)]
    pub clipscore: Option<f64>,
    #[serde(default)]
    pub reward: Option<f64>,
}

/// The `--stub-scorers` file: per-kind lookup tables plus optional defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubTable {
    #[serde(default = "StubTable::default_model_id")]
    pub model_id: String,
    #[serde(default)]
    pub sts: Vec<PairScore>,
    #[serde(default)]
    pub nli: Vec<PairLabel>,
    #[serde(default)]
    pub clipscore: Vec<ImageTextScore>,
    #[serde(default)]
    pub reward: Vec<RewardScore>,
    #[serde(default)]
    pub defaults: StubDefaults,
}

impl Default for StubTable {
    fn default() -> Self {
        StubTable {
            model_id: Self::default_model_id(),
            sts: Vec::new(),
            nli: Vec::new(),
            clipscore: Vec::new(),
            reward: Vec::new(),
            defaults: StubDefaults::default(),
        }
    }
}

impl StubTable {
    fn default_model_id() -> String {
        "stub".to_string()
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScorerError::Unavailable(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ScorerError::Malformed(format!("{}: {e}", path.display())))
    }
}

/// Table-driven scorer. Lookups are exact on the request's text fields.
#[derive(Debug, Clone)]
pub struct StubScorer {
    model_id: String,
    numeric: HashMap<ScoreRequest, f64>,
    labels: HashMap<ScoreRequest, NliLabel>,
    defaults: StubDefaults,
}

impl StubScorer {
    pub fn new(table: StubTable) -> Self {
        let mut numeric = HashMap::new();
        let mut labels = HashMap::new();
        for e in table.sts {
            numeric.insert(ScoreRequest::Sts { texts: e.texts }, e.score);
        }
        for e in table.clipscore {
            numeric.insert(ScoreRequest::clipscore(&e.text, &e.image_uri), e.score);
        }
        for e in table.reward {
            numeric.insert(ScoreRequest::reward(&e.instruction, &e.response), e.score);
        }
        for e in table.nli {
            labels.insert(ScoreRequest::Nli { texts: e.texts }, e.label);
        }
        StubScorer {
            model_id: table.model_id,
            numeric,
            labels,
            defaults: table.defaults,
        }
    }

    /// A stub that passes everything: similarity 1, entailment, CLIPScore 100, reward 0.
    pub fn all_pass() -> Self {
        StubScorer::new(StubTable {
            defaults: StubDefaults {
                sts: Some(1.0),
                nli: Some(NliLabel::Entailment),
                clipscore: Some(100.0),
                reward: Some(0.0),
            },
            ..StubTable::default()
        })
    }

    fn miss(request: &ScoreRequest) -> ScorerError {
        ScorerError::StubMiss(serde_json::to_string(request).unwrap_or_default())
    }
}

impl ScoreBackend for StubScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        if let ScoreRequest::Nli { .. } = request {
            let label = self
                .labels
                .get(request)
                .copied()
                .or(self.defaults.nli)
                .ok_or_else(|| Self::miss(request))?;
            return Ok(ScoreResponse {
                score: None,
                label: Some(label),
                model_id: self.model_id.clone(),
            });
        }
        let fallback = match request.kind() {
            ScorerKind::Sts => self.defaults.sts,
            ScorerKind::Clipscore => self.defaults.clipscore,
            ScorerKind::Reward => self.defaults.reward,
            ScorerKind::Nli => None,
        };
        let score = self
            .numeric
            .get(request)
            .copied()
            .or(fallback)
            .ok_or_else(|| Self::miss(request))?;
        Ok(ScoreResponse {
            score: Some(score),
            label: None,
            model_id: self.model_id.clone(),
        })
    }
}

/// Shape check on a response: nli carries exactly a label, the rest a finite
/// score, similarity within [-1, 1].
pub fn check_response(kind: ScorerKind, resp: &ScoreResponse) -> Result<(), ScorerError> {
    let bad = |m: &str| Err(ScorerError::Malformed(format!("{kind} response: {m}")));
    match (kind, resp.score, resp.label) {
        (ScorerKind::Nli, None, Some(_)) => Ok(()),
        (ScorerKind::Nli, _, _) => bad("expected a label and no score"),
        (_, Some(s), None) if !s.is_finite() => bad("score is not finite"),
        (ScorerKind::Sts, Some(s), None) if !(-1.0..=1.0).contains(&s) => bad("similarity outside [-1, 1]"),
        (_, Some(_), None) => Ok(()),
        _ => bad("expected a score and no label"),
    }
}

/// Body of `GET /health`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub loaded_models: Vec<String>,
}

/// Client for the scoring sidecar.
pub struct HttpScorer {
    base_url: String,
    bearer_token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpScorer {
    pub fn new(base_url: &str, bearer_token: Option<String>, timeout: Duration) -> Result<Self, ScorerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ScorerError::Unavailable(e.to_string()))?;
        Ok(HttpScorer {
            base_url: base_url.trim_end_matches('/').to_string(),
            bearer_token,
            client,
        })
    }
}

impl HttpScorer {
    pub fn health(&self) -> Result<Health, ScorerError> {
        let url = format!("{}/health", self.base_url);
        let resp = self
            .client
            .get(&url)
            .send()
            .map_err(|e| ScorerError::Unavailable(format!("{url}: {e}")))?;
        if !resp.status().is_success() {
            return Err(ScorerError::Unavailable(format!("{url}: HTTP {}", resp.status().as_u16())));
        }
        resp.json()
            .map_err(|e| ScorerError::Malformed(format!("{url}: {e}")))
    }
}

impl ScoreBackend for HttpScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        let url = format!("{}/{}", self.base_url, request.kind());
        let mut builder = self.client.post(&url).json(request);
        if let Some(token) = &self.bearer_token {
            builder = builder.bearer_auth(token);
        }
        let resp = builder
            .send()
            .map_err(|e| ScorerError::Unavailable(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| ScorerError::Unavailable(format!("{url}: {e}")))?;
        match status {
            200 => {
                let parsed: ScoreResponse = serde_json::from_str(&body)
                    .map_err(|e| ScorerError::Malformed(format!("{url}: {e}")))?;
                check_response(request.kind(), &parsed)?;
                Ok(parsed)
            }
            422 => Err(ScorerError::StubMiss(body)),
            400 => Err(ScorerError::Malformed(body)),
            _ => Err(ScorerError::Unavailable(format!("{url}: HTTP {status}"))),
        }
    }
}
