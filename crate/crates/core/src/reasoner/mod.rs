//! Prompt construction, reasoning backends and diagnosis parsing.

#[cfg(feature = "http")]
mod http;
mod mock;
mod parse;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[cfg(feature = "http")]
pub use http::HttpBackend;
pub use mock::mock_reason;
pub use parse::{normalize_component, parse_diagnosis};

use crate::fusion::EvidenceContext;
use crate::time::format_secs;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub step: u32,
    pub action: String,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub component: String,
    pub reason: String,
    pub reasoning_trace: Vec<ReasoningStep>,
}

impl Diagnosis {
    pub fn steps(&self) -> usize {
        self.reasoning_trace.len()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed output: {0}")]
    MalformedOutput(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("evidence context is empty")]
    EmptyContext,
    #[error("backend unreachable after {attempts} attempts: {detail}")]
    BackendTimeout { attempts: u32, detail: String },
    #[error("backend returned HTTP {status}: {body}")]
    BackendHttp { status: u16, body: String },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("backend config: {0}")]
    Config(String),
    #[error("recorded responses: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    Mock,
    /// Replays completions stored by prompt hash.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    /// Sampling seed forwarded to backends that accept one.
    pub seed: Option<u64>,
    pub max_retries: u32,
    pub timeout_secs: f64,
    /// First retry delay; doubles on every further retry.
    pub backoff_ms: u64,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    /// Recorded-response file for the replay backend.
    pub recording: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: "mock".into(),
            temperature: 0.0,
            seed: None,
            max_retries: 2,
            timeout_secs: 60.0,
            backoff_ms: 500,
            api_key_env: "RCA_API_KEY".into(),
            recording: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), ReasonerError> {
        let bad = |m: &str| Err(ReasonerError::Config(m.to_string()));
        match (self.kind, &self.endpoint) {
            (BackendKind::HttpChat, None) => return bad("http_chat needs an endpoint"),
            (BackendKind::Mock | BackendKind::Replay, Some(_)) => return bad("endpoint is only valid for http_chat"),
            _ => {}
        }
        if self.kind == BackendKind::Replay && self.recording.is_none() {
            return bad("replay needs a recording file");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be non-negative");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout_secs must be positive");
        }
        Ok(())
    }
}

/// What a backend sees for one call.
pub struct ReasonRequest<'a> {
    pub prompt: &'a str,
    /// The evidence behind the prompt; only the mock reads it.
    pub context: &'a EvidenceContext,
}

pub trait Backend: Send + Sync {
    fn complete(&self, req: &ReasonRequest<'_>) -> Result<String, ReasonerError>;
}

pub struct MockBackend;

impl Backend for MockBackend {
    fn complete(&self, req: &ReasonRequest<'_>) -> Result<String, ReasonerError> {
        let d = mock_reason(req.context)?;
        Ok(serde_json::to_string_pretty(&d).expect("diagnosis serializes"))
    }
}

pub fn prompt_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Stored completions keyed by the SHA-256 of the prompt.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    responses: BTreeMap<String, String>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, ReasonerError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ReasonerError::Replay(format!("{}: {e}", path.display())))?;
        let responses =
            serde_json::from_str(&text).map_err(|e| ReasonerError::Replay(format!("{}: {e}", path.display())))?;
        Ok(Self { responses })
    }

    pub fn from_map(responses: BTreeMap<String, String>) -> Self {
        Self { responses }
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, req: &ReasonRequest<'_>) -> Result<String, ReasonerError> {
        let key = prompt_key(req.prompt);
        self.responses
            .get(&key)
            .cloned()
            .ok_or_else(|| ReasonerError::Replay(format!("no recorded response for prompt {key}")))
    }
}

/// Wraps a backend and keeps every completion for later replay.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<BTreeMap<String, String>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn recorded(&self) -> BTreeMap<String, String> {
        self.recorded.lock().expect("recording lock").clone()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.recorded()).expect("map serializes");
        std::fs::write(path, text)
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, req: &ReasonRequest<'_>) -> Result<String, ReasonerError> {
        let out = self.inner.complete(req)?;
        self.recorded
            .lock()
            .expect("recording lock")
            .insert(prompt_key(req.prompt), out.clone());
        Ok(out)
    }
}

pub fn make_backend(cfg: &BackendConfig) -> Result<Box<dyn Backend>, ReasonerError> {
    cfg.validate()?;
    match cfg.kind {
        BackendKind::Mock => Ok(Box::new(MockBackend)),
        BackendKind::Replay => Ok(Box::new(ReplayBackend::load(
            cfg.recording.as_deref().expect("validated"),
        )?)),
        #[cfg(feature = "http")]
        BackendKind::HttpChat => Ok(Box::new(HttpBackend::new(cfg)?)),
        #[cfg(not(feature = "http"))]
        BackendKind::HttpChat => Err(ReasonerError::Config("built without HTTP support".into())),
    }
}

pub const OUTPUT_SCHEMA: &str = r#"{
  "component": "<root-cause service, pod or node name>",
  "reason": "<one-sentence fault explanation>",
  "reasoning_trace": [
    {"step": 1, "action": "ToolName(args)", "observation": "<what the evidence shows>"}
  ]
}"#;

/// The full reasoning prompt for a context.
pub fn build_prompt(ctx: &EvidenceContext) -> Result<String, ReasonerError> {
    if ctx.is_empty() {
        return Err(ReasonerError::EmptyContext);
    }
    Ok(format!(
        "You are an SRE performing root cause analysis on a microservice system.\n\
         A fault occurred from {start} to {end}. Please identify the root cause.\n\
         \n\
         Evidence, ranked by score; each bundle fuses trace, metric and log findings for one component:\n\
         ----- BEGIN EVIDENCE -----\n\
         {evidence}\
         ----- END EVIDENCE -----\n\
         \n\
         Work through the evidence step by step. Name each step as an action such as\n\
         TraceAnalysis(Tracedata), MetricsAnalysis(<component>), LogSearch(<component>) or AnalyzeAPM(<component>).\n\
         The component must be a single service, pod or node name that appears in the evidence.\n\
         Output JSON only, with no prose and no code fences, following this schema exactly:\n\
         {OUTPUT_SCHEMA}\n",
        start = format_secs(ctx.case_window.start()),
        end = format_secs(ctx.case_window.end()),
        evidence = ctx.render(),
    ))
}

/// Follow-up prompt after an unparseable answer.
pub fn repair_prompt(previous: &str, error: &ParseError) -> String {
    let previous: String = previous.chars().take(2_000).collect();
    format!(
        "Your previous answer could not be used ({error}).\n\
         Output valid JSON only, schema:\n\
         {OUTPUT_SCHEMA}\n\
         Previous answer:\n\
         {previous}\n"
    )
}

/// One backend call.
pub fn infer(prompt: &str, ctx: &EvidenceContext, backend: &dyn Backend) -> Result<String, ReasonerError> {
    backend.complete(&ReasonRequest { prompt, context: ctx })
}

/// Prompt, call, parse; one repair round on a parse failure.
pub fn diagnose(ctx: &EvidenceContext, backend: &dyn Backend) -> Result<Diagnosis, ReasonerError> {
    let prompt = build_prompt(ctx)?;
    let raw = infer(&prompt, ctx, backend)?;
    match parse_diagnosis(&raw) {
        Ok(d) => Ok(d),
        Err(first) => {
            tracing::warn!("unparseable diagnosis, asking for a repair: {first}");
            let retry = infer(&repair_prompt(&raw, &first), ctx, backend)?;
            Ok(parse_diagnosis(&retry)?)
        }
    }
}
