//! Chat-completions client with retry and exponential backoff.
//!
//! The wire protocol is the OpenAI-compatible `POST {endpoint}/chat/completions`
//! shape. Transports are injectable so the retry contract is testable
//! without a network.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::prompt::PromptBundle;

/// Rows requested per chat call; large single requests truncate in practice.
pub const LLM_BATCH_ROWS: usize = 25;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: usize,
    /// Env var holding the bearer token. Empty disables auth (for local
    /// endpoints).
    pub api_key_env: String,
    pub max_retries: usize,
    pub timeout_s: f64,
    /// Initial backoff before the first retry; doubles per attempt.
    pub backoff_s: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-3.5-turbo".into(),
            temperature: 1.0,
            max_tokens: 4096,
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 3,
            timeout_s: 60.0,
            backoff_s: 0.5,
        }
    }
}

impl LlmConfig {
    /// Resolve the bearer token, failing fast (before any network I/O)
    /// when the env var is configured but unset.
    pub fn resolve_api_key(&self) -> Result<Option<String>> {
        if self.api_key_env.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.api_key_env) {
            Ok(key) if !key.is_empty() => Ok(Some(key)),
            _ => Err(Error::MissingApiKey {
                env_var: self.api_key_env.clone(),
            }),
        }
    }
}

/// One outgoing chat-completions call.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub url: String,
    pub body: serde_json::Value,
    pub api_key: Option<String>,
    pub timeout_s: f64,
}

#[derive(Debug, Clone)]
pub enum TransportError {
    Timeout,
    Connection(String),
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Timeout => f.write_str("request timed out"),
            TransportError::Connection(msg) => write!(f, "connection error: {msg}"),
        }
    }
}

/// Sends one HTTP request and returns (status, body). Implementations must
/// not retry internally; the retry policy lives in [`llm_generate`].
pub trait ChatTransport {
    fn post_chat(&self, request: &ChatRequest) -> std::result::Result<(u16, String), TransportError>;
}

/// Blocking HTTP transport.
pub struct HttpTransport;

impl ChatTransport for HttpTransport {
    fn post_chat(&self, request: &ChatRequest) -> std::result::Result<(u16, String), TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(request.timeout_s))
            .build()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        let mut builder = client.post(&request.url).json(&request.body);
        if let Some(key) = &request.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        Ok((status, body))
    }
}

fn chat_body(config: &LlmConfig, prompt: &PromptBundle) -> serde_json::Value {
    serde_json::json!({
        "model": config.model_name,
        "messages": [
            {"role": "system", "content": prompt.task_objective},
            {"role": "user", "content": prompt.user_message()},
        ],
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    })
}

fn extract_content(body: &str) -> Result<String> {
    let parsed: serde_json::Value =
        serde_json::from_str(body).map_err(|e| Error::LlmMalformedResponse(e.to_string()))?;
    parsed["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| {
            Error::LlmMalformedResponse("missing choices[0].message.content".to_string())
        })
}

/// Issue one chat call for the prompt, retrying transient failures
/// (HTTP 429/5xx and timeouts) with exponential backoff up to
/// `max_retries`. Auth failures and other 4xx responses are not retried.
pub fn llm_generate(
    config: &LlmConfig,
    prompt: &PromptBundle,
    transport: &dyn ChatTransport,
) -> Result<String> {
    let api_key = config.resolve_api_key()?;
    let request = ChatRequest {
        url: format!(
            "{}/chat/completions",
            config.endpoint_url.trim_end_matches('/')
        ),
        body: chat_body(config, prompt),
        api_key,
        timeout_s: config.timeout_s,
    };

    let attempts = config.max_retries + 1;
    let mut last_error = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let backoff = config.backoff_s * (1u64 << (attempt - 1).min(6)) as f64;
            if backoff > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(backoff.min(8.0)));
            }
        }
        match transport.post_chat(&request) {
            Ok((200, body)) => return extract_content(&body),
            Ok((status @ (401 | 403), body)) => return Err(Error::LlmAuth { status, body }),
            Ok((status, body)) if status == 429 || status >= 500 => {
                last_error = format!("http {status}: {}", body.chars().take(200).collect::<String>());
            }
            Ok((status, body)) => {
                return Err(Error::LlmTransport(format!(
                    "unexpected http {status}: {}",
                    body.chars().take(200).collect::<String>()
                )));
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Err(Error::LlmRetriesExhausted {
        attempts,
        last_error,
    })
}

/// Request up to [`LLM_BATCH_ROWS`] rows per call until `prompts` are
/// exhausted, returning raw responses in request order.
pub fn llm_generate_batched(
    config: &LlmConfig,
    prompts: &[PromptBundle],
    transport: &dyn ChatTransport,
) -> Result<Vec<String>> {
    let mut responses = Vec::with_capacity(prompts.len());
    for prompt in prompts {
        responses.push(llm_generate(config, prompt, transport)?);
    }
    Ok(responses)
}
