use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    #[default]
    Text,
    JsonObject,
}

impl ResponseFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseFormat::Text => "text",
            ResponseFormat::JsonObject => "json_object",
        }
    }
}

/// One chat-completion request.
///
/// `request_tag` and `max_tokens` describe where the request came from and how
/// it is sent; neither takes part in [`ChatRequest::prompt_hash`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<Message>,
    #[serde(default)]
    pub response_format: ResponseFormat,
    #[serde(default)]
    pub request_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("request has no messages".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.messages.iter().skip(1).any(|m| m.role == Role::System) {
            return Err(GatewayError::InvalidRequest(
                "a system message may only appear first".into(),
            ));
        }
        Ok(())
    }

    /// Canonical byte form used for hashing. Every variable-length field is
    /// length-prefixed so that no two distinct requests share a rendering.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"nlrl-chat-v1\n");
        push_field(&mut out, "model", self.model.as_bytes());
        push_field(&mut out, "temperature", format!("{:.6}", self.temperature).as_bytes());
        push_field(&mut out, "response_format", self.response_format.as_str().as_bytes());
        push_field(&mut out, "messages", self.messages.len().to_string().as_bytes());
        for m in &self.messages {
            push_field(&mut out, m.role.as_str(), m.content.as_bytes());
        }
        out
    }

    /// Hex SHA-256 of [`ChatRequest::canonical_bytes`].
    pub fn prompt_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }
}

fn push_field(out: &mut Vec<u8>, name: &str, value: &[u8]) {
    out.extend_from_slice(name.as_bytes());
    out.push(b':');
    out.extend_from_slice(value.len().to_string().as_bytes());
    out.push(b':');
    out.extend_from_slice(value);
    out.push(b'\n');
}

/// JSON body for an OpenAI-compatible `POST /chat/completions`.
pub fn request_body(req: &ChatRequest) -> serde_json::Value {
    let messages: Vec<serde_json::Value> = req
        .messages
        .iter()
        .map(|m| serde_json::json!({ "role": m.role.as_str(), "content": m.content }))
        .collect();
    let mut body = serde_json::json!({
        "model": req.model,
        "messages": messages,
        "temperature": req.temperature,
    });
    if req.response_format == ResponseFormat::JsonObject {
        body["response_format"] = serde_json::json!({ "type": "json_object" });
    }
    if let Some(max) = req.max_tokens {
        body["max_tokens"] = serde_json::json!(max);
    }
    body
}

/// Pulls `choices[0].message.content` (and `usage`, when present) out of a
/// chat-completions response body.
pub fn parse_response_body(body: &str) -> Result<(String, Option<serde_json::Value>), GatewayError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| GatewayError::MalformedResponse(format!("body is not JSON: {e}")))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| {
            GatewayError::MalformedResponse("missing choices[0].message.content".into())
        })?;
    Ok((content.to_string(), value.get("usage").cloned()))
}
