use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::report::render::canonical_json_compact;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
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

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PurposeTag {
    Detect,
    GenerateSignature,
}

/// One chat-completion call. `template_version` names the prompt template
/// that produced `messages` and takes part in the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub temperature: f64,
    pub messages: Vec<Message>,
    pub purpose: PurposeTag,
    pub template_version: String,
}

impl ChatRequest {
    pub fn new(
        model_id: impl Into<String>,
        temperature: f64,
        messages: Vec<Message>,
        purpose: PurposeTag,
        template_version: impl Into<String>,
    ) -> Result<Self> {
        let req = ChatRequest {
            model_id: model_id.into(),
            temperature,
            messages,
            purpose,
            template_version: template_version.into(),
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(Error::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.messages.is_empty() {
            return Err(Error::InvalidRequest("no messages".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(Error::InvalidRequest("empty model id".into()));
        }
        Ok(())
    }

    /// The content of the last user message, if any.
    pub fn last_user_content(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResult {
    pub text: String,
    pub model_id: String,
    pub cached: bool,
    /// When the underlying provider answer was first stored.
    pub stored_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    provider_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, provider_id: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("embedding has no coordinates".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding has non-finite values".into()));
        }
        Ok(EmbeddingVector {
            values,
            provider_id: provider_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }
}

/// SHA-256 digest of a canonical request serialization, as 64 hex chars.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// What a cache entry is keyed on.
#[derive(Debug, Clone, Copy)]
pub enum CacheInput<'a> {
    Chat(&'a ChatRequest),
    Embed(&'a str),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum KeyMaterial<'a> {
    Chat {
        provider_id: &'a str,
        model_id: &'a str,
        temperature: f64,
        purpose: PurposeTag,
        template_version: &'a str,
        messages: &'a [Message],
    },
    Embed {
        provider_id: &'a str,
        text: &'a str,
    },
}

impl<'a> CacheInput<'a> {
    fn material(&self, provider_id: &'a str) -> KeyMaterial<'a> {
        match *self {
            CacheInput::Chat(r) => KeyMaterial::Chat {
                provider_id,
                model_id: &r.model_id,
                temperature: r.temperature,
                purpose: r.purpose,
                template_version: &r.template_version,
                messages: &r.messages,
            },
            CacheInput::Embed(text) => KeyMaterial::Embed { provider_id, text },
        }
    }

    /// The canonical JSON the key digests; also stored as the entry's `request`.
    pub fn canonical(&self, provider_id: &str) -> String {
        canonical_json_compact(&self.material(provider_id))
            .expect("key material is always serializable")
    }
}

pub fn build_cache_key(provider_id: &str, input: CacheInput<'_>) -> CacheKey {
    let digest = Sha256::digest(input.canonical(provider_id).as_bytes());
    CacheKey(hex::encode(digest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(t: f64) -> ChatRequest {
        ChatRequest::new(
            "gpt-4",
            t,
            vec![Message::user("Why?")],
            PurposeTag::GenerateSignature,
            "basic-v1",
        )
        .unwrap()
    }

    #[test]
    fn key_is_deterministic_and_hex() {
        let a = build_cache_key("mock", CacheInput::Chat(&req(0.5)));
        let b = build_cache_key("mock", CacheInput::Chat(&req(0.5)));
        assert_eq!(a, b);
        assert_eq!(a.as_str().len(), 64);
        assert!(a.as_str().chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    }

    #[test]
    fn key_covers_every_field() {
        let base = req(0.25);
        let k = |r: &ChatRequest, p: &str| build_cache_key(p, CacheInput::Chat(r));
        let k0 = k(&base, "mock");
        assert_ne!(k0, k(&req(0.5), "mock"));
        assert_ne!(k0, k(&base, "other"));
        let mut r = base.clone();
        r.model_id = "gpt-4o".into();
        assert_ne!(k0, k(&r, "mock"));
        let mut r = base.clone();
        r.purpose = PurposeTag::Detect;
        assert_ne!(k0, k(&r, "mock"));
        let mut r = base.clone();
        r.template_version = "basic-v2".into();
        assert_ne!(k0, k(&r, "mock"));
        let mut r = base.clone();
        r.messages[0].content.push(' ');
        assert_ne!(k0, k(&r, "mock"));
        let mut r = base;
        r.messages[0].role = Role::System;
        assert_ne!(k0, k(&r, "mock"));
    }

    #[test]
    fn chat_and_embed_keys_do_not_collide() {
        let e = build_cache_key("mock", CacheInput::Embed("Why?"));
        assert_ne!(e, build_cache_key("mock", CacheInput::Chat(&req(0.0))));
        assert_ne!(e, build_cache_key("mock", CacheInput::Embed("Why? ")));
    }

    #[test]
    fn request_validation() {
        let bad = ChatRequest::new("m", 1.5, vec![Message::user("x")], PurposeTag::Detect, "v");
        assert!(matches!(bad, Err(Error::InvalidRequest(_))));
        let bad = ChatRequest::new("m", -0.1, vec![Message::user("x")], PurposeTag::Detect, "v");
        assert!(bad.is_err());
        let bad = ChatRequest::new("m", 0.0, vec![], PurposeTag::Detect, "v");
        assert!(bad.is_err());
        assert!(ChatRequest::new("m", 1.0, vec![Message::user("x")], PurposeTag::Detect, "v").is_ok());
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN], "p").is_err());
        assert!(EmbeddingVector::new(vec![], "p").is_err());
        assert_eq!(EmbeddingVector::new(vec![1.0, 2.0], "p").unwrap().dim(), 2);
    }
}
