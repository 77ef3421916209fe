//! Chat-completion client with answer extraction and bounded retries.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agents::prompt::PromptPayload;
use crate::error::{Error, Result};
use crate::questionnaire::Answer;

pub const DEFAULT_TOKEN_ENV: &str = "RISKPROF_API_TOKEN";
const MAX_BACKOFF_MS: u64 = 30_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { temperature: 0.7, top_p: 0.9, max_new_tokens: 50 }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    /// Server root (`http://host:port`), a `/v1` prefix, or the full
    /// `/chat/completions` URL.
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_token_env() -> String {
    DEFAULT_TOKEN_ENV.to_string()
}
fn default_timeout() -> u64 {
    60
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}

impl ExternalConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            token_env: default_token_env(),
            timeout_secs: default_timeout(),
            concurrency: default_concurrency(),
            backoff_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::Config(format!("endpoint {:?} is not an http(s) URL", self.base_url)));
        }
        if self.timeout_secs == 0 || self.concurrency == 0 {
            return Err(Error::Config("timeout and concurrency must be positive".into()));
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }
}

/// Result of one logical query: the last raw text seen and the extracted
/// answer, `None` once all attempts are spent.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub raw_text: String,
    pub extracted: Option<Answer>,
    pub attempts: usize,
}

pub struct ExternalClient {
    config: ExternalConfig,
    generation: GenerationConfig,
    token: Option<String>,
    http: ureq::Agent,
}

impl ExternalClient {
    /// Reads the bearer token from the configured environment variable.
    pub fn new(config: ExternalConfig, generation: GenerationConfig) -> Result<Self> {
        config.validate()?;
        generation.validate()?;
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        let http = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, generation, token, http })
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }

    pub fn request_body(&self, payload: &PromptPayload) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": payload.messages(),
            "temperature": self.generation.temperature,
            "top_p": self.generation.top_p,
            "max_tokens": self.generation.max_new_tokens,
        })
    }

    /// One HTTP round trip returning the first choice's message content.
    pub fn complete(&self, payload: &PromptPayload) -> std::result::Result<String, String> {
        let mut req = self.http.post(self.config.endpoint());
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(self.request_body(payload)).map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        let body: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }

    /// Queries until `extract` yields an answer or `max_attempts` are used.
    /// Transport failures count as attempts and back off exponentially.
    pub fn query(&self, payload: &PromptPayload, extract: &dyn Fn(&str) -> Option<Answer>, max_attempts: usize) -> QueryOutcome {
        let mut raw_text = String::new();
        let mut failures = 0u32;
        for attempt in 1..=max_attempts.max(1) {
            match self.complete(payload) {
                Ok(text) => {
                    let extracted = extract(&text);
                    raw_text = text;
                    if extracted.is_some() {
                        return QueryOutcome { raw_text, extracted, attempts: attempt };
                    }
                }
                Err(e) => {
                    log::warn!("attempt {attempt} against {} failed: {e}", self.config.endpoint());
                    if attempt < max_attempts {
                        let wait = self.config.backoff_ms.saturating_mul(1 << failures.min(16)).min(MAX_BACKOFF_MS);
                        std::thread::sleep(Duration::from_millis(wait));
                    }
                    failures += 1;
                }
            }
        }
        QueryOutcome { raw_text, extracted: None, attempts: max_attempts.max(1) }
    }
}

/// Free-function form of [`ExternalClient::query`].
pub fn external_query(
    client: &ExternalClient,
    payload: &PromptPayload,
    extract: &dyn Fn(&str) -> Option<Answer>,
    max_attempts: usize,
) -> QueryOutcome {
    client.query(payload, extract, max_attempts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_forms() {
        assert_eq!(ExternalConfig::new("http://h:1", "m").endpoint(), "http://h:1/v1/chat/completions");
        assert_eq!(ExternalConfig::new("https://h/v1/", "m").endpoint(), "https://h/v1/chat/completions");
        assert_eq!(ExternalConfig::new("http://h/x/chat/completions", "m").endpoint(), "http://h/x/chat/completions");
    }

    #[test]
    fn body_fields() {
        let c = ExternalClient::new(ExternalConfig::new("http://127.0.0.1:9", "m"), GenerationConfig::default()).unwrap();
        let p = PromptPayload::Chat { system: "s".into(), user: "u".into() };
        let b = c.request_body(&p);
        assert_eq!(b["model"], "m");
        assert_eq!(b["messages"][1]["role"], "user");
        assert_eq!(b["temperature"], 0.7);
        assert_eq!(b["top_p"], 0.9);
        assert_eq!(b["max_tokens"], 50);
    }

    #[test]
    fn unreachable_server_is_invalid_not_an_error() {
        let mut cfg = ExternalConfig::new("http://127.0.0.1:9", "m");
        cfg.backoff_ms = 1;
        cfg.timeout_secs = 2;
        let c = ExternalClient::new(cfg, GenerationConfig::default()).unwrap();
        let out = c.query(&PromptPayload::Plain("q".into()), &|_| Some(Answer::Letter('A')), 3);
        assert_eq!((out.extracted, out.attempts), (None, 3));
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(ExternalConfig::new("ftp://x", "m").validate().is_err());
        assert!(GenerationConfig { temperature: -0.1, ..Default::default() }.validate().is_err());
    }
}
