//! Decompression validation against an LLM.
//!
//! The model gets the dictionary in the system prompt and the compressed
//! payload as the user message, and is asked to reproduce the original text.
//! Its answer is scored with the full metric suite. Any chat-completion
//! style HTTP endpoint can be targeted through a request body template; the
//! mock clients stand in for a model in offline runs.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch_pipeline::{
    plan_batches, run_parallel, BatchPlan, Corpus, PipelineError, SweepRow,
};
use crate::compressor::{compress, CompressError, CompressionParams};
use crate::dictionary::{
    decompress, template_compress, template_decompress, templates_dictionary, Dictionary, Template,
    SLOT_SEPARATOR,
};
use crate::metrics::{
    aggregate, compression_ratio, score_pair, score_reconstruction, AggregateMode, MetricReport,
    RatioReport,
};
use crate::segmenter::CostModel;

const SYSTEM_PROMPT_TEMPLATE: &str = concat!(
    "You are a PRECISE text decoder. \n",
    "Replace ALL <M###> tokens with EXACT \n",
    "dictionary values. \n",
    "\n",
    "Dictionary: {dictionary}\n",
    "\n",
    "RULES:\n",
    "1. Find EVERY <M###> token and replace with its EXACT dictionary value\n",
    "2. Copy ALL other text EXACTLY as written\n",
    "3. NEVER modify any content except <M###> tokens\n",
    "4. Output EVERY character from input\n",
    "\n",
    "REPLACE ALL TOKENS. \n",
    "PRESERVE ALL OTHER TEXT.\n",
);

/// Environment variable holding the endpoint URL.
pub const ENV_ENDPOINT: &str = "PROMPTDICT_ENDPOINT";
/// Environment variable holding the model identifier.
pub const ENV_MODEL: &str = "PROMPTDICT_MODEL";
/// Environment variable naming the variable that holds the API token.
pub const ENV_AUTH_VAR: &str = "PROMPTDICT_AUTH_ENV";

/// OpenAI-compatible chat completion body.
pub const DEFAULT_BODY_TEMPLATE: &str = r#"{"model": "{model}", "max_tokens": {max_tokens}, "messages": [{"role": "system", "content": "{system}"}, {"role": "user", "content": "{user}"}]}"#;
pub const DEFAULT_RESPONSE_POINTER: &str = "/choices/0/message/content";

/// Dictionary values are shown one per line, so line breaks and other
/// control whitespace inside a value are written as escapes.
fn escape_prompt_value(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\x0b' => out.push_str("\\v"),
            '\x0c' => out.push_str("\\f"),
            c => out.push(c),
        }
    }
    out
}

/// Instantiates the decoder system prompt with `label: value` lines in
/// label-index order.
pub fn build_system_prompt(dict: &Dictionary) -> String {
    let block: String = dict
        .iter()
        .map(|(meta, value)| format!("\n{}: {}", meta.label(), escape_prompt_value(value)))
        .collect();
    SYSTEM_PROMPT_TEMPLATE.replace("{dictionary}", &block)
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportError {
    #[error("authentication failed (HTTP {0})")]
    Auth(u16),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Status { status, .. } => *status == 429 || *status >= 500,
            Self::Network(_) | Self::Timeout => true,
            Self::Auth(_) | Self::MalformedResponse(_) | Self::Config(_) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, initial_backoff: Duration::from_millis(500), multiplier: 2.0 }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { max_retries: 0, ..Self::default() }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff.mul_f64(self.multiplier.powi(attempt as i32))
    }
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// retry budget is spent. Returns the outcome and the number of attempts.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut() -> Result<T, TransportError>,
) -> (Result<T, TransportError>, u32) {
    let mut attempt = 0;
    loop {
        let out = op();
        attempt += 1;
        match out {
            Err(e) if e.is_retryable() && attempt <= policy.max_retries => {
                std::thread::sleep(policy.backoff(attempt - 1));
            }
            other => return (other, attempt),
        }
    }
}

/// Ground truth for offline decoders. Never sent over the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodingKey {
    Dictionary(Dictionary),
    Templates(Vec<Template>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub key: DecodingKey,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Provider usage block, verbatim, when the response carries one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<serde_json::Value>,
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, TransportError>;

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy::none()
    }

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API token.
    pub auth_env: Option<String>,
    pub auth_header: String,
    pub auth_prefix: String,
    pub max_output_tokens: usize,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// JSON body with `{system}`, `{user}`, `{model}` and `{max_tokens}`
    /// placeholders.
    pub body_template: String,
    /// JSON pointer to the completion text in the response.
    pub response_pointer: String,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            auth_env: None,
            auth_header: "Authorization".into(),
            auth_prefix: "Bearer ".into(),
            max_output_tokens: 64_000,
            timeout: Duration::from_secs(600),
            retry: RetryPolicy::default(),
            body_template: DEFAULT_BODY_TEMPLATE.into(),
            response_pointer: DEFAULT_RESPONSE_POINTER.into(),
        }
    }
}

impl LlmClientConfig {
    /// Fills endpoint, model and auth variable name from the environment.
    pub fn from_env() -> Self {
        let mut c = Self::default();
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            c.endpoint = v;
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            c.model = v;
        }
        c.auth_env = std::env::var(ENV_AUTH_VAR).ok().filter(|v| !v.is_empty());
        c
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if self.endpoint.trim().is_empty() {
            return Err(TransportError::Config("endpoint is empty".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(TransportError::Config("max output tokens must be positive".into()));
        }
        Ok(())
    }

    /// Renders the request body in one pass, so placeholder-like text inside
    /// the prompts is never substituted again.
    pub fn render_body(&self, system: &str, user: &str) -> String {
        let json_inner = |s: &str| {
            let quoted = serde_json::to_string(s).expect("string serialization is infallible");
            quoted[1..quoted.len() - 1].to_string()
        };
        let max_tokens = self.max_output_tokens.to_string();
        let substitutions: [(&str, String); 4] = [
            ("{system}", json_inner(system)),
            ("{user}", json_inner(user)),
            ("{model}", json_inner(&self.model)),
            ("{max_tokens}", max_tokens),
        ];
        let tpl = self.body_template.as_str();
        let mut out = String::with_capacity(tpl.len() + system.len() + user.len());
        let mut rest = tpl;
        'scan: while let Some(i) = rest.find('{') {
            out.push_str(&rest[..i]);
            let tail = &rest[i..];
            for (name, value) in &substitutions {
                if let Some(after) = tail.strip_prefix(name) {
                    out.push_str(value);
                    rest = after;
                    continue 'scan;
                }
            }
            out.push('{');
            rest = &tail[1..];
        }
        out.push_str(rest);
        out
    }
}

/// Blocking HTTP client for JSON chat-completion endpoints.
pub struct HttpClient {
    config: LlmClientConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(config: LlmClientConfig) -> Result<Self, TransportError> {
        config.validate()?;
        let token = match &config.auth_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| TransportError::Config(format!("auth variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, token, agent })
    }

    fn send(&self, body: &str) -> Result<Completion, TransportError> {
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header(&self.config.auth_header, format!("{}{}", self.config.auth_prefix, token));
        }
        let mut resp = req.send(body.as_bytes()).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            ureq::Error::BadUri(u) => TransportError::Config(format!("bad endpoint URI {u}")),
            other => TransportError::Network(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(TransportError::Auth(status)),
            _ => return Err(TransportError::Status { status, body: text }),
        }
        let json: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| TransportError::MalformedResponse(e.to_string()))?;
        let content = json
            .pointer(&self.config.response_pointer)
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                TransportError::MalformedResponse(format!("no string at {}", self.config.response_pointer))
            })?;
        Ok(Completion { text: content.to_string(), usage: json.get("usage").cloned() })
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, TransportError> {
        self.send(&self.config.render_body(&request.system, &request.user))
    }

    fn retry_policy(&self) -> RetryPolicy {
        self.config.retry
    }

    fn describe(&self) -> String {
        format!("http {} model={}", self.config.endpoint, self.config.model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockBehavior {
    /// Decodes with the reference decompressor.
    Oracle,
    /// Oracle output minus its final character.
    DropLastChar,
    /// Always answers with an empty string.
    Empty,
    /// Returns a retryable error for the first N calls, then decodes.
    FailFirst(u32),
    /// Every call fails with a retryable error.
    AlwaysFail,
}

/// Deterministic stand-in for a model.
#[derive(Debug)]
pub struct MockClient {
    behavior: MockBehavior,
    retry: RetryPolicy,
    calls: AtomicUsize,
    seen: Mutex<Vec<(String, String)>>,
}

impl MockClient {
    pub fn new(behavior: MockBehavior) -> Self {
        Self {
            behavior,
            retry: RetryPolicy { initial_backoff: Duration::ZERO, ..RetryPolicy::default() },
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn oracle() -> Self {
        Self::new(MockBehavior::Oracle)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every (system, user) pair received, in call order.
    pub fn requests(&self) -> Vec<(String, String)> {
        self.seen.lock().unwrap().clone()
    }

    fn decode(request: &ChatRequest) -> String {
        match &request.key {
            DecodingKey::Dictionary(dict) => {
                decompress(&request.user, dict).unwrap_or_else(|_| request.user.clone())
            }
            DecodingKey::Templates(templates) => request
                .user
                .split('\n')
                .map(|line| template_decompress(line, templates).unwrap_or_else(|_| line.to_string()))
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }
}

impl LlmClient for MockClient {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, TransportError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen
            .lock()
            .unwrap()
            .push((request.system.clone(), request.user.clone()));
        let text = match self.behavior {
            MockBehavior::Oracle => Self::decode(request),
            MockBehavior::DropLastChar => {
                let mut s = Self::decode(request);
                s.pop();
                s
            }
            MockBehavior::Empty => String::new(),
            MockBehavior::FailFirst(n) if (call as u64) < u64::from(n) => {
                return Err(TransportError::Status { status: 503, body: "mock outage".into() })
            }
            MockBehavior::FailFirst(_) => Self::decode(request),
            MockBehavior::AlwaysFail => {
                return Err(TransportError::Status { status: 503, body: "mock outage".into() })
            }
        };
        Ok(Completion { text, usage: None })
    }

    fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    fn describe(&self) -> String {
        format!("mock {:?}", self.behavior)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    /// Hierarchical compression per batch; scored once per batch.
    Algorithmic,
    /// Per-line template substitution; scored once per line.
    Template,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// The model answered with an empty string; scored as-is.
    EmptyResponse,
    Failed { error: String },
    /// Not sent: the expected output would not fit the output window.
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRun {
    pub batch_id: usize,
    #[serde(flatten)]
    pub status: RunStatus,
    pub dictionary: Dictionary,
    pub system_prompt: String,
    pub compressed: String,
    pub original: String,
    pub response: Option<String>,
    pub scores: Option<MetricReport>,
    /// Scores after stripping one leading and one trailing newline from the
    /// response; only present when normalization is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_scores: Option<MetricReport>,
    /// Per-line scores in template mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub line_scores: Vec<MetricReport>,
    pub attempts: u32,
    pub elapsed_ms: u128,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub mode: ValidationMode,
    pub normalize: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { mode: ValidationMode::Algorithmic, normalize: false }
    }
}

fn normalize_response(s: &str) -> &str {
    let s = s.strip_prefix('\n').unwrap_or(s);
    s.strip_suffix('\n').unwrap_or(s)
}

fn score_lines(original: &str, response: &str) -> Vec<MetricReport> {
    let originals: Vec<&str> = original.split('\n').collect();
    let responses: Vec<&str> = response.split('\n').collect();
    originals
        .iter()
        .enumerate()
        .map(|(i, orig)| {
            let cand = responses.get(i).copied().unwrap_or("");
            let expected: &[&str] = if orig.trim().is_empty() { &[] } else { std::slice::from_ref(orig) };
            score_pair(orig, cand, expected)
        })
        .collect()
}

/// Sends one compressed batch and scores the answer against `original`.
///
/// Transport failures that survive the client's retry policy produce a
/// `Failed` run without scores rather than an error.
pub fn validate_batch(
    client: &dyn LlmClient,
    batch_id: usize,
    compressed: &str,
    key: &DecodingKey,
    original: &str,
    options: &ValidateOptions,
) -> ValidationRun {
    let dictionary = match key {
        DecodingKey::Dictionary(d) => d.clone(),
        DecodingKey::Templates(t) => templates_dictionary(t),
    };
    let request = ChatRequest {
        system: build_system_prompt(&dictionary),
        user: compressed.to_string(),
        key: key.clone(),
    };
    let started = Instant::now();
    let (outcome, attempts) = with_retries(&client.retry_policy(), || client.complete(&request));
    let elapsed_ms = started.elapsed().as_millis();
    let mut run = ValidationRun {
        batch_id,
        status: RunStatus::Ok,
        dictionary,
        system_prompt: request.system,
        compressed: request.user,
        original: original.to_string(),
        response: None,
        scores: None,
        normalized_scores: None,
        line_scores: Vec::new(),
        attempts,
        elapsed_ms,
        usage: None,
    };
    let completion = match outcome {
        Ok(c) => c,
        Err(e) => {
            run.status = RunStatus::Failed { error: e.to_string() };
            return run;
        }
    };
    if completion.text.is_empty() {
        run.status = RunStatus::EmptyResponse;
    }
    let score = |response: &str| -> (MetricReport, Vec<MetricReport>) {
        match options.mode {
            ValidationMode::Algorithmic => (score_reconstruction(original, response), Vec::new()),
            ValidationMode::Template => {
                let lines = score_lines(original, response);
                let agg = aggregate(&lines, AggregateMode::PerLog).expect("split yields at least one line");
                (agg, lines)
            }
        }
    };
    let (scores, lines) = score(&completion.text);
    run.scores = Some(scores);
    run.line_scores = lines;
    if options.normalize {
        run.normalized_scores = Some(score(normalize_response(&completion.text)).0);
    }
    run.response = Some(completion.text);
    run.usage = completion.usage;
    run
}

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("template mode requires a template file")]
    MissingTemplates,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("batch {batch}: {source}")]
    Compress {
        batch: usize,
        #[source]
        source: CompressError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub mode: ValidationMode,
    pub params: CompressionParams,
    pub budget_tokens: usize,
    pub max_output_tokens: usize,
    pub jobs: usize,
    pub normalize: bool,
    pub templates: Option<Vec<Template>>,
}

impl ExperimentConfig {
    pub fn new(mode: ValidationMode, params: CompressionParams) -> Self {
        Self {
            dataset: "corpus".into(),
            mode,
            params,
            budget_tokens: 64_000,
            max_output_tokens: 64_000,
            jobs: 0,
            normalize: false,
            templates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub mode: ValidationMode,
    pub client: String,
    pub l_max: Option<usize>,
    /// Mean over batches with std (algorithmic) or over lines with SEM
    /// (template). `None` when no batch produced a response.
    pub aggregate: Option<MetricReport>,
    pub ratio: Option<RatioReport>,
    pub batches: usize,
    pub failed: usize,
    pub rejected: usize,
    pub sweep_row: Option<SweepRow>,
    pub plan: BatchPlan,
    #[serde(skip)]
    pub runs: Vec<ValidationRun>,
}

impl ExperimentReport {
    /// Writes one JSON file per batch run into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<(), ValidationError> {
        let io = |source| ValidationError::Io { path: dir.display().to_string(), source };
        std::fs::create_dir_all(dir).map_err(io)?;
        for run in &self.runs {
            let path = dir.join(format!("batch_{:04}.json", run.batch_id));
            let json = serde_json::to_string_pretty(run).expect("run serialization is infallible");
            std::fs::write(&path, json).map_err(|source| ValidationError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }
}

struct PreparedBatch {
    id: usize,
    original: String,
    compressed: String,
    key: DecodingKey,
    rejected: Option<String>,
}

fn template_cost(model: &CostModel, text: &str) -> usize {
    model.cost(&text.replace(SLOT_SEPARATOR, " "))
}

/// Compresses `corpus` batch by batch, has `client` decompress every batch,
/// and aggregates the scores.
pub fn run_validation_experiment(
    corpus: &Corpus,
    config: &ExperimentConfig,
    client: &dyn LlmClient,
) -> Result<ExperimentReport, ValidationError> {
    let model = &config.params.cost_model;
    if config.mode == ValidationMode::Template && config.templates.is_none() {
        return Err(ValidationError::MissingTemplates);
    }
    config.params.validate().map_err(|source| ValidationError::Compress { batch: 0, source })?;
    let budget = config.budget_tokens.min(config.max_output_tokens);
    let plan = plan_batches(corpus, budget, model)?;

    let mut prepared = Vec::with_capacity(plan.batches.len());
    let (mut original_tokens, mut compressed_tokens, mut dictionary_tokens, mut entries) = (0, 0, 0, 0);
    for batch in &plan.batches {
        let rejected = (batch.tokens > config.max_output_tokens).then(|| {
            format!("expected output of {} tokens exceeds limit {}", batch.tokens, config.max_output_tokens)
        });
        match config.mode {
            ValidationMode::Algorithmic => {
                let original = corpus.text(batch.lines.clone());
                let result = compress(&original, &config.params)
                    .map_err(|source| ValidationError::Compress { batch: batch.index, source })?;
                original_tokens += result.original_tokens;
                compressed_tokens += result.compressed_tokens;
                dictionary_tokens += result.dictionary_tokens;
                entries += result.dictionary.len();
                prepared.push(PreparedBatch {
                    id: batch.index,
                    compressed: result.compressed_text(),
                    key: DecodingKey::Dictionary(result.dictionary),
                    original,
                    rejected,
                });
            }
            ValidationMode::Template => {
                let templates = config.templates.as_ref().expect("checked above");
                let lines: Vec<&str> = corpus.lines()[batch.lines.clone()]
                    .iter()
                    .map(|l| l.strip_suffix('\n').unwrap_or(l))
                    .collect();
                let original = lines.join("\n");
                let compressed = lines
                    .iter()
                    .map(|l| template_compress(l, templates))
                    .collect::<Vec<_>>()
                    .join("\n");
                original_tokens += model.cost(&original);
                compressed_tokens += template_cost(model, &compressed);
                prepared.push(PreparedBatch {
                    id: batch.index,
                    compressed,
                    key: DecodingKey::Templates(templates.clone()),
                    original,
                    rejected,
                });
            }
        }
    }
    if let (ValidationMode::Template, Some(templates)) = (config.mode, &config.templates) {
        let dict = templates_dictionary(templates);
        dictionary_tokens = dict.token_cost(model);
        entries = dict.len();
    }

    let options = ValidateOptions { mode: config.mode, normalize: config.normalize };
    let runs = run_parallel(&prepared, config.jobs, |p| match &p.rejected {
        Some(reason) => ValidationRun {
            batch_id: p.id,
            status: RunStatus::Rejected { reason: reason.clone() },
            dictionary: match &p.key {
                DecodingKey::Dictionary(d) => d.clone(),
                DecodingKey::Templates(t) => templates_dictionary(t),
            },
            system_prompt: String::new(),
            compressed: p.compressed.clone(),
            original: p.original.clone(),
            response: None,
            scores: None,
            normalized_scores: None,
            line_scores: Vec::new(),
            attempts: 0,
            elapsed_ms: 0,
            usage: None,
        },
        None => validate_batch(client, p.id, &p.compressed, &p.key, &p.original, &options),
    });

    let aggregate_report = match config.mode {
        ValidationMode::Algorithmic => {
            let scored: Vec<MetricReport> = runs.iter().filter_map(|r| r.scores).collect();
            aggregate(&scored, AggregateMode::PerBatch).ok()
        }
        ValidationMode::Template => {
            let lines: Vec<MetricReport> = runs.iter().flat_map(|r| r.line_scores.iter().copied()).collect();
            aggregate(&lines, AggregateMode::PerLog).ok()
        }
    };
    let ratio = compression_ratio(original_tokens, compressed_tokens, dictionary_tokens).ok();
    let l_max = (config.mode == ValidationMode::Algorithmic).then_some(config.params.l_max);
    let sweep_row = match (l_max, ratio) {
        (Some(l_max), Some(ratio)) => Some(SweepRow {
            dataset: config.dataset.clone(),
            l_max,
            cr: ratio.cr,
            cr_input: ratio.cr_input,
            dict_entries: entries,
            levenshtein: aggregate_report.map(|a| a.scores.levenshtein),
            rouge: aggregate_report.map(|a| a.scores.rouge()),
            bleu: aggregate_report.map(|a| a.scores.bleu),
        }),
        _ => None,
    };
    Ok(ExperimentReport {
        dataset: config.dataset.clone(),
        mode: config.mode,
        client: client.describe(),
        l_max,
        aggregate: aggregate_report,
        ratio,
        batches: runs.len(),
        failed: runs.iter().filter(|r| matches!(r.status, RunStatus::Failed { .. })).count(),
        rejected: runs.iter().filter(|r| matches!(r.status, RunStatus::Rejected { .. })).count(),
        sweep_row,
        plan,
        runs,
    })
}
