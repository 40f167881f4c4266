use serde_json::{json, Value};

use super::{ApiKey, ModelConfig, ProviderError, TokenUsage};
use crate::prompt::ConversationContext;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub timeout: std::time::Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// One blocking HTTP POST. `Err` means no response was obtained at all.
pub trait Transport: Send + Sync {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, String>;
}

pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(request.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut builder = agent.post(&request.url);
        for (k, v) in &request.headers {
            builder = builder.header(k, v);
        }
        let mut response = builder.send(request.body.as_str()).map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

pub(super) fn chat_request(config: &ModelConfig, key: &ApiKey, base_url: &str, context: &ConversationContext) -> HttpRequest {
    let mut messages = Vec::with_capacity(2);
    if let Some(previous) = &context.previous_reply {
        messages.push(json!({ "role": "assistant", "content": previous }));
    }
    messages.push(json!({ "role": "user", "content": context.new_prompt }));
    let body = json!({
        "model": config.model_name,
        "temperature": config.temperature,
        "messages": messages,
    });
    HttpRequest {
        url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
        headers: vec![
            ("Content-Type".into(), "application/json".into()),
            ("Authorization".into(), format!("Bearer {}", key.expose())),
        ],
        body: body.to_string(),
        timeout: config.request_timeout,
    }
}

pub(super) fn parse_chat_response(body: &str) -> Result<(String, Option<TokenUsage>), ProviderError> {
    let value: Value = serde_json::from_str(body).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::BadResponse("missing choices[0].message.content".into()))?;
    let usage = value.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt: u.get("prompt_tokens")?.as_u64()?,
            completion: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok((text.to_string(), usage))
}
