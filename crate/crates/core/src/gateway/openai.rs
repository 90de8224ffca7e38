//! Adapter for OpenAI-compatible `/chat/completions` and `/embeddings` endpoints.
//!
//! Credentials and base URLs are read from the environment only:
//!
//! | variable | default |
//! |---|---|
//! | `SURVEYSIG_CHAT_API_KEY` | required |
//! | `SURVEYSIG_CHAT_BASE_URL` | `https://api.openai.com/v1` |
//! | `SURVEYSIG_EMBED_API_KEY` | falls back to the chat key |
//! | `SURVEYSIG_EMBED_BASE_URL` | falls back to the chat base URL |

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::types::ChatRequest;
use super::{ChatProvider, EmbeddingProvider};
use crate::error::{Error, Result};

pub const CHAT_KEY_VAR: &str = "SURVEYSIG_CHAT_API_KEY";
pub const CHAT_URL_VAR: &str = "SURVEYSIG_CHAT_BASE_URL";
pub const EMBED_KEY_VAR: &str = "SURVEYSIG_EMBED_API_KEY";
pub const EMBED_URL_VAR: &str = "SURVEYSIG_EMBED_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone)]
pub struct Endpoint {
    pub base_url: String,
    pub api_key: String,
    pub timeout: Duration,
}

impl Endpoint {
    pub fn chat_from_env(timeout: Duration) -> Result<Self> {
        let api_key = std::env::var(CHAT_KEY_VAR)
            .map_err(|_| Error::Config(format!("{CHAT_KEY_VAR} is not set")))?;
        let base_url = std::env::var(CHAT_URL_VAR).unwrap_or_else(|_| DEFAULT_BASE_URL.into());
        Ok(Endpoint {
            base_url,
            api_key,
            timeout,
        })
    }

    pub fn embed_from_env(timeout: Duration) -> Result<Self> {
        let api_key = std::env::var(EMBED_KEY_VAR)
            .or_else(|_| std::env::var(CHAT_KEY_VAR))
            .map_err(|_| Error::Config(format!("{EMBED_KEY_VAR} is not set")))?;
        let base_url = std::env::var(EMBED_URL_VAR)
            .or_else(|_| std::env::var(CHAT_URL_VAR))
            .unwrap_or_else(|_| DEFAULT_BASE_URL.into());
        Ok(Endpoint {
            base_url,
            api_key,
            timeout,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }

    fn client(&self) -> Result<reqwest::blocking::Client> {
        reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))
    }

    fn post(&self, client: &reqwest::blocking::Client, path: &str, body: serde_json::Value) -> Result<String> {
        let resp = client
            .post(self.url(path))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(transport_error)?;
        let status = resp.status();
        let text = resp.text().map_err(transport_error)?;
        if !status.is_success() {
            return Err(Error::Provider {
                status: Some(status.as_u16()),
                message: text.chars().take(500).collect(),
            });
        }
        Ok(text)
    }
}

fn transport_error(e: reqwest::Error) -> Error {
    if e.is_timeout() {
        Error::Timeout(e.to_string())
    } else {
        Error::Provider {
            status: e.status().map(|s| s.as_u16()),
            message: e.to_string(),
        }
    }
}

fn malformed(e: impl std::fmt::Display) -> Error {
    Error::Provider {
        status: None,
        message: format!("malformed provider response: {e}"),
    }
}

pub struct OpenAiChat {
    endpoint: Endpoint,
    client: reqwest::blocking::Client,
}

impl OpenAiChat {
    pub fn new(endpoint: Endpoint) -> Result<Self> {
        let client = endpoint.client()?;
        Ok(OpenAiChat { endpoint, client })
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl ChatProvider for OpenAiChat {
    fn provider_id(&self) -> &str {
        "openai-chat"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let messages: Vec<_> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let body = json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": messages,
        });
        let raw = self.endpoint.post(&self.client, "chat/completions", body)?;
        let parsed: ChatCompletion = serde_json::from_str(&raw).map_err(malformed)?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| malformed("no choices"))?;
        Ok(choice.message.content.unwrap_or_default())
    }
}

pub struct OpenAiEmbedder {
    endpoint: Endpoint,
    model: String,
    id: String,
    client: reqwest::blocking::Client,
}

impl OpenAiEmbedder {
    pub fn new(endpoint: Endpoint, model: impl Into<String>) -> Result<Self> {
        let model = model.into();
        let client = endpoint.client()?;
        Ok(OpenAiEmbedder {
            id: format!("openai-embed:{model}"),
            endpoint,
            model,
            client,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl EmbeddingProvider for OpenAiEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let body = json!({"model": self.model, "input": text});
        let raw = self.endpoint.post(&self.client, "embeddings", body)?;
        let parsed: EmbeddingResponse = serde_json::from_str(&raw).map_err(malformed)?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| malformed("no embedding data"))
    }
}
