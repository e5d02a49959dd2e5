//! Chat-completions client: one POST per draw, bounded retries on
//! rate-limit and server errors.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Total attempts per request; only 429 and 5xx responses are retried,
/// other failures indicate misconfiguration and surface immediately.
const MAX_ATTEMPTS: u32 = 3;

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

pub(crate) struct ChatRequest<'a> {
    pub endpoint_url: &'a str,
    pub model_id: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
    pub extra_params: &'a BTreeMap<String, serde_json::Value>,
    pub prompt: &'a str,
}

impl ChatRequest<'_> {
    fn body(&self) -> String {
        let mut body = serde_json::json!({
            "model": self.model_id,
            "messages": [{"role": "user", "content": self.prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        for (key, value) in self.extra_params {
            body[key] = value.clone();
        }
        body.to_string()
    }
}

/// Issue one completion request, returning the first choice's content.
///
/// The API key is read from `DBPA_API_KEY` at call time and is never
/// written to any log or error message.
pub(crate) fn chat_completion(
    agent: &ureq::Agent,
    request: &ChatRequest<'_>,
    retry_base_delay: Duration,
) -> Result<String> {
    let api_key = std::env::var("DBPA_API_KEY").ok();
    let body = request.body();

    let mut attempt = 1u32;
    loop {
        let mut builder = agent
            .post(request.endpoint_url)
            .content_type("application/json");
        if let Some(key) = &api_key {
            builder = builder.header("authorization", format!("Bearer {key}"));
        }
        let response = builder.send(body.as_str());

        match response {
            Err(e) => return Err(Error::transport(e.to_string())),
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| Error::transport(e.to_string()))?;
                if (200..300).contains(&status) {
                    let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| {
                        Error::upstream(status, format!("unparseable chat response: {e}"))
                    })?;
                    return parsed
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.message.content)
                        .ok_or_else(|| Error::upstream(status, "response has no choices"));
                }
                let retryable = status == 429 || (500..600).contains(&status);
                if retryable && attempt < MAX_ATTEMPTS {
                    let backoff = retry_base_delay * 2u32.pow(attempt - 1);
                    std::thread::sleep(backoff);
                    attempt += 1;
                    continue;
                }
                return Err(Error::upstream(
                    status,
                    format!("chat endpoint failed after {attempt} attempt(s)"),
                ));
            }
        }
    }
}
