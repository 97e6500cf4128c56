//! OpenAI-compatible chat-completions plumbing shared by the remote policy and
//! the remote teacher.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

/// Request body. Temperature is pinned to zero for every call.
#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: &str, messages: Vec<ChatMessage>, max_tokens: u32) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages,
            temperature: 0.0,
            max_tokens,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
pub struct Choice {
    pub message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
pub struct ResponseMessage {
    #[serde(default)]
    pub content: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RemoteError {
    /// Transport or server failure that persisted through every retry.
    #[error("remote endpoint unavailable after {attempts} attempt(s): {detail}")]
    Unavailable { attempts: u32, detail: String },
    /// The endpoint answered, but not with a usable completion.
    #[error("unexpected response from remote endpoint: {0}")]
    Protocol(String),
    #[error("remote client misconfigured: {0}")]
    Config(String),
}

/// Anything that turns a chat request into the assistant's reply text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, RemoteError>;
}

/// Endpoint settings for one remote model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub max_tokens: u32,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "base-agent".into(),
            api_key_env: None,
            max_tokens: 512,
            max_attempts: 3,
            backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

#[cfg(feature = "remote")]
pub use http::HttpChatClient;

#[cfg(feature = "remote")]
mod http {
    use std::time::Duration;

    use super::*;

    /// Blocking HTTP client with bounded exponential retry on transport
    /// errors, 429 and 5xx responses.
    pub struct HttpChatClient {
        agent: ureq::Agent,
        url: String,
        api_key: Option<String>,
        max_attempts: u32,
        backoff: Duration,
    }

    impl HttpChatClient {
        pub fn new(cfg: &RemoteConfig) -> Result<Self, RemoteError> {
            let api_key = match &cfg.api_key_env {
                None => None,
                Some(var) => Some(
                    std::env::var(var)
                        .map_err(|_| RemoteError::Config(format!("environment variable {var} is not set")))?,
                ),
            };
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
                .http_status_as_error(false)
                .build()
                .into();
            Ok(HttpChatClient {
                agent,
                url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
                api_key,
                max_attempts: cfg.max_attempts.max(1),
                backoff: Duration::from_millis(cfg.backoff_ms),
            })
        }

        fn attempt(&self, request: &ChatRequest) -> Result<String, (bool, String)> {
            let mut call = self.agent.post(&self.url);
            if let Some(key) = &self.api_key {
                call = call.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = call.send_json(request).map_err(|e| (true, e.to_string()))?;
            let status = resp.status().as_u16();
            let body = resp.body_mut().read_to_string().map_err(|e| (true, e.to_string()))?;
            if status == 429 || status >= 500 {
                return Err((true, format!("HTTP {status}: {body}")));
            }
            if status >= 400 {
                return Err((false, format!("HTTP {status}: {body}")));
            }
            let parsed: ChatResponse = serde_json::from_str(&body).map_err(|e| (false, format!("bad body: {e}")))?;
            parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .ok_or_else(|| (false, "response has no message content".to_string()))
        }
    }

    impl ChatBackend for HttpChatClient {
        fn complete(&self, request: &ChatRequest) -> Result<String, RemoteError> {
            let mut last = String::new();
            for attempt in 0..self.max_attempts {
                if attempt > 0 {
                    std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
                }
                match self.attempt(request) {
                    Ok(text) => return Ok(text),
                    Err((true, detail)) => {
                        log::warn!("chat request to {} failed: {detail}", self.url);
                        last = detail;
                    }
                    Err((false, detail)) => return Err(RemoteError::Protocol(detail)),
                }
            }
            Err(RemoteError::Unavailable {
                attempts: self.max_attempts,
                detail: last,
            })
        }
    }
}
