//! Model backends: an OpenAI-compatible chat-completions client and a
//! deterministic rule-based mock.

use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::prompt::Prompt;
use super::JudgeError;
use crate::corpus::Triple;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: connection problems, timeouts, 429 and 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait JudgeBackend: Send + Sync {
    /// Returns the model's raw reply to `prompt`. `triple` is the source of
    /// the prompt; only offline backends look at it.
    fn complete(&self, model_id: &str, prompt: &Prompt, triple: &Triple) -> Result<String, BackendError>;

    /// Whether replies are computed locally (no latency to measure, no rate limit).
    fn is_local(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL such as `http://localhost:8000/v1`, or the full
    /// `.../chat/completions` URL.
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub request_timeout_secs: f64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "http://localhost:8000/v1".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            request_timeout_secs: 120.0,
        }
    }
}

pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: &HttpConfig) -> Result<Self, JudgeError> {
        let base = config.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_secs))
            .build()
            .map_err(|e| JudgeError::Config(format!("http client: {e}")))?;
        Ok(HttpBackend { url, api_key, client })
    }

    pub fn request_body(model_id: &str, prompt: &Prompt) -> serde_json::Value {
        json!({
            "model": model_id,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": 0,
        })
    }
}

fn reply_content(body: &serde_json::Value) -> Option<String> {
    let content = body.get("choices")?.get(0)?.get("message")?.get("content")?;
    Some(content.as_str().unwrap_or_default().to_string())
}

impl JudgeBackend for HttpBackend {
    fn complete(&self, model_id: &str, prompt: &Prompt, _triple: &Triple) -> Result<String, BackendError> {
        let mut req = self.client.post(&self.url).json(&Self::request_body(model_id, prompt));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        let text = resp.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("HTTP {status}: {}", truncate(&text, 200))));
        }
        let body: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("malformed response body: {e}")))?;
        reply_content(&body).ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Deterministic offline answering rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockRule {
    AlwaysYes,
    AlwaysNo,
    /// Answers with the ground truth.
    Truth,
    YesIfEvenOutputLen,
    YesIfCodeCharsBelow(usize),
    /// Ground truth below the code-size threshold, its negation otherwise, so
    /// success is exactly `code_chars < N`.
    TruthBelowCodeChars(usize),
}

impl FromStr for MockRule {
    type Err = JudgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || JudgeError::Config(format!("unknown mock rule {s:?}"));
        let threshold = |arg: &str| arg.parse::<usize>().map_err(|_| bad());
        match s.split_once(':') {
            None => match s {
                "always-yes" => Ok(MockRule::AlwaysYes),
                "always-no" => Ok(MockRule::AlwaysNo),
                "truth" => Ok(MockRule::Truth),
                "yes-if-even-output-len" => Ok(MockRule::YesIfEvenOutputLen),
                _ => Err(bad()),
            },
            Some(("yes-if-code-chars-lt", n)) => Ok(MockRule::YesIfCodeCharsBelow(threshold(n)?)),
            Some(("truth-below-code-chars", n)) => Ok(MockRule::TruthBelowCodeChars(threshold(n)?)),
            Some(_) => Err(bad()),
        }
    }
}

impl std::fmt::Display for MockRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MockRule::AlwaysYes => f.write_str("always-yes"),
            MockRule::AlwaysNo => f.write_str("always-no"),
            MockRule::Truth => f.write_str("truth"),
            MockRule::YesIfEvenOutputLen => f.write_str("yes-if-even-output-len"),
            MockRule::YesIfCodeCharsBelow(n) => write!(f, "yes-if-code-chars-lt:{n}"),
            MockRule::TruthBelowCodeChars(n) => write!(f, "truth-below-code-chars:{n}"),
        }
    }
}

impl MockRule {
    pub fn says_yes(&self, triple: &Triple) -> bool {
        let code_chars = triple.code.chars().count();
        match *self {
            MockRule::AlwaysYes => true,
            MockRule::AlwaysNo => false,
            MockRule::Truth => triple.label == 1,
            MockRule::YesIfEvenOutputLen => triple.output.chars().count().is_multiple_of(2),
            MockRule::YesIfCodeCharsBelow(n) => code_chars < n,
            MockRule::TruthBelowCodeChars(n) => (triple.label == 1) == (code_chars < n),
        }
    }
}

pub struct MockBackend {
    pub rule: MockRule,
}

impl JudgeBackend for MockBackend {
    fn complete(&self, _model_id: &str, _prompt: &Prompt, triple: &Triple) -> Result<String, BackendError> {
        Ok(if self.rule.says_yes(triple) { "yes" } else { "no" }.to_string())
    }

    fn is_local(&self) -> bool {
        true
    }
}
