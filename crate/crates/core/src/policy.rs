//! Policy endpoints: the trait the orchestrator drives, a deterministic
//! scripted implementation for tests, and an HTTP completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{ANSWER_CLOSE, ANSWER_OPEN, INFORMATION_OPEN, SEARCH_CLOSE, SEARCH_OPEN};

pub const POLICY_KEY_ENV: &str = "ROUTERAG_POLICY_API_KEY";
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MAX_TOKENS: usize = 500;

const PROMPT_TEMPLATE: &str = include_str!("../assets/prompt_template_v1.txt");
pub const PROMPT_TEMPLATE_VERSION: &str = "v1";
const QUESTION_SLOT: &str = "{question}";
const QUESTION_PREFIX: &str = "Question: ";

/// The policy prompt with `question` substituted.
pub fn render_prompt(question: &str) -> String {
    PROMPT_TEMPLATE.replace(QUESTION_SLOT, question)
}

pub fn prompt_template() -> &'static str {
    PROMPT_TEMPLATE
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("malformed policy reply: {0}")]
    Malformed(String),
}

pub trait PolicyClient: Send + Sync {
    /// Continues `context` until a stop sequence (included in the returned
    /// text) or end of stream.
    fn generate(
        &self,
        context: &str,
        stop_sequences: &[&str],
        temperature: f64,
        max_tokens: usize,
    ) -> Result<String, PolicyError>;
}

/// Cuts `text` right after the earliest stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stop_sequences: &[&str]) -> &'a str {
    stop_sequences
        .iter()
        .filter_map(|s| text.find(s).map(|i| i + s.len()))
        .min()
        .map_or(text, |end| &text[..end])
}

/// Recovers the question and the number of completed turns from a context
/// built by the orchestrator: the question is the rest of the `Question: `
/// line, and every finished turn injected exactly one information block.
pub fn episode_position(context: &str) -> (&str, usize) {
    let Some(start) = context.find(QUESTION_PREFIX) else {
        return (context.trim(), 0);
    };
    let rest = &context[start + QUESTION_PREFIX.len()..];
    let (question, tail) = rest.split_once('\n').unwrap_or((rest, ""));
    (question, tail.matches(INFORMATION_OPEN).count())
}

/// Deterministic policy driven by `script(question, turn)`. Output is cut at
/// the first stop sequence and to `max_tokens` whitespace tokens, like an
/// endpoint would.
pub struct ScriptedPolicy<F> {
    script: F,
}

impl<F> ScriptedPolicy<F>
where
    F: Fn(&str, usize) -> String + Send + Sync,
{
    pub fn new(script: F) -> Self {
        Self { script }
    }
}

impl<F> PolicyClient for ScriptedPolicy<F>
where
    F: Fn(&str, usize) -> String + Send + Sync,
{
    fn generate(
        &self,
        context: &str,
        stop_sequences: &[&str],
        _temperature: f64,
        max_tokens: usize,
    ) -> Result<String, PolicyError> {
        let (question, turn) = episode_position(context);
        let raw = (self.script)(question, turn);
        let stopped = truncate_at_stop(&raw, stop_sequences);
        Ok(limit_tokens(stopped, max_tokens).to_string())
    }
}

fn limit_tokens(text: &str, max_tokens: usize) -> &str {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            seen += 1;
            if seen > max_tokens {
                return &text[..i];
            }
        }
    }
    text
}

#[derive(Debug, Serialize)]
pub struct CompletionRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub stop: &'a [&'a str],
    pub temperature: f64,
    pub max_tokens: usize,
}

#[derive(Debug, Deserialize)]
pub struct CompletionChoice {
    pub text: String,
    #[serde(default)]
    pub finish_reason: Option<String>,
    /// The matched stop string, reported by some servers (e.g. vLLM).
    #[serde(default)]
    pub stop_reason: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
pub struct CompletionResponse {
    pub choices: Vec<CompletionChoice>,
}

/// Completions servers drop the matched stop sequence from the text; put it
/// back so the parser sees a closed block.
pub fn restore_stop_sequence(choice: &CompletionChoice, stop_sequences: &[&str]) -> String {
    let mut text = choice.text.clone();
    if choice.finish_reason.as_deref() != Some("stop") {
        return text;
    }
    if stop_sequences.iter().any(|s| text.ends_with(s)) {
        return text;
    }
    let reported = choice
        .stop_reason
        .as_ref()
        .and_then(|v| v.as_str())
        .filter(|s| stop_sequences.contains(s));
    let inferred = || {
        let last_search = text.rfind(SEARCH_OPEN);
        let last_answer = text.rfind(ANSWER_OPEN);
        match (last_search, last_answer) {
            (Some(s), Some(a)) if a > s => Some(ANSWER_CLOSE),
            (Some(_), _) => Some(SEARCH_CLOSE),
            (None, Some(_)) => Some(ANSWER_CLOSE),
            (None, None) => None,
        }
        .filter(|s| stop_sequences.contains(s))
    };
    if let Some(stop) = reported.or_else(inferred) {
        text.push_str(stop);
    }
    text
}

/// OpenAI-style `/v1/completions` client.
pub struct HttpPolicyClient {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    token: Option<String>,
}

impl HttpPolicyClient {
    pub fn new(base_url: &str, model: &str, token: Option<String>) -> Result<Self, PolicyError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| PolicyError::Unreachable(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/v1/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            token,
        })
    }

    /// Reads the key from [`POLICY_KEY_ENV`].
    pub fn from_env(base_url: &str, model: &str) -> Result<Self, PolicyError> {
        Self::new(base_url, model, std::env::var(POLICY_KEY_ENV).ok())
    }
}

impl PolicyClient for HttpPolicyClient {
    fn generate(
        &self,
        context: &str,
        stop_sequences: &[&str],
        temperature: f64,
        max_tokens: usize,
    ) -> Result<String, PolicyError> {
        let body = CompletionRequest {
            model: &self.model,
            prompt: context,
            stop: stop_sequences,
            temperature,
            max_tokens,
        };
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| PolicyError::Unreachable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(PolicyError::Unreachable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(PolicyError::Malformed(format!("HTTP {status}")));
        }
        let parsed: CompletionResponse = resp
            .json()
            .map_err(|e| PolicyError::Malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .first()
            .ok_or_else(|| PolicyError::Malformed("no choices".into()))?;
        Ok(restore_stop_sequence(choice, stop_sequences))
    }
}
