use std::time::Duration;

use crate::request::{request_body, ChatRequest};

pub const API_KEY_VAR: &str = "OPENAI_API_KEY";
pub const BASE_URL_VAR: &str = "OPENAI_BASE_URL";
pub const ORGANIZATION_VAR: &str = "OPENAI_ORGANIZATION";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Raw HTTP outcome of one attempt.
#[derive(Debug, Clone)]
pub struct TransportReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, thiserror::Error)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

/// Sends one chat-completions request. Retry and caching live above this.
pub trait ChatTransport: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<TransportReply, TransportError>;
}

/// OpenAI-compatible HTTP transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    organization: Option<String>,
}

impl HttpTransport {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        organization: Option<String>,
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            organization,
        })
    }

    /// Reads base URL, key and organization from the environment.
    /// The key may only be omitted for a custom base URL.
    pub fn from_env() -> Result<Self, TransportError> {
        let base = std::env::var(BASE_URL_VAR).ok().filter(|b| !b.is_empty());
        let key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        if base.is_none() && key.is_none() {
            return Err(TransportError(format!("{API_KEY_VAR} is not set")));
        }
        Self::new(
            base.unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
            key,
            std::env::var(ORGANIZATION_VAR).ok(),
            Duration::from_secs(120),
        )
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

impl ChatTransport for HttpTransport {
    fn send(&self, req: &ChatRequest) -> Result<TransportReply, TransportError> {
        let mut builder = self.client.post(self.endpoint()).json(&request_body(req));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        if let Some(org) = &self.organization {
            builder = builder.header("OpenAI-Organization", org);
        }
        let resp = builder.send().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(TransportReply { status, body })
    }
}
