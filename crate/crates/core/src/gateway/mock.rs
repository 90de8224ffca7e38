//! Deterministic offline providers.
//!
//! Both mocks are pure functions of their configuration and input, so two
//! processes with the same seed produce identical outputs.
//!
//! # Hash embedder construction
//!
//! Text is lowercased and split on every non-alphanumeric character; empty
//! pieces are dropped (a text with no alphanumeric token uses its lowercased,
//! trimmed self as the only token). Each token `t` maps to a vector `u(seed, "tok", t)`
//! and the embedding is
//!
//! ```text
//! sum over tokens of u(seed, "tok", t)  +  0.25 * u(seed, "text", trimmed_text)
//! ```
//!
//! Coordinate `i` of `u(seed, kind, s)` comes from
//! `SHA-256("{seed}:{kind}:{s}:{i / 4}")`: take the big-endian `u64` at byte
//! offset `8 * (i % 4)`, keep its top 20 bits `b`, and map to `b / 2^19 - 1`,
//! a value in `[-1, 1)` that is exactly representable. Shared words pull
//! vectors together; the whole-text term separates distinct texts.

use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::types::{ChatRequest, PurposeTag};
use super::{ChatProvider, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::report::render::canonical_json_compact;

pub const MOCK_CHAT_ID: &str = "mock-chat";

/// Default detector markers: a response is judged AI when it contains one.
pub const DEFAULT_MARKERS: &[&str] = &["glad to assist", "as an ai"];

pub struct MockChatProvider {
    seed: u64,
    canned: Option<String>,
    markers: Vec<String>,
    calls: AtomicU64,
}

impl MockChatProvider {
    pub fn new(seed: u64) -> Self {
        MockChatProvider {
            seed,
            canned: None,
            markers: DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect(),
            calls: AtomicU64::new(0),
        }
    }

    /// Always answer with `text`.
    pub fn with_canned(mut self, text: impl Into<String>) -> Self {
        self.canned = Some(text.into());
        self
    }

    pub fn with_markers<I, S>(mut self, markers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.markers = markers.into_iter().map(|m| m.into().to_lowercase()).collect();
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn detect(&self, request: &ChatRequest) -> String {
        let body = request.last_user_content().unwrap_or_default();
        let response = crate::detector::extract_response_block(body).unwrap_or(body);
        let lower = response.to_lowercase();
        if self.markers.iter().any(|m| lower.contains(m.as_str())) {
            "AI".to_string()
        } else {
            "HUMAN".to_string()
        }
    }

    fn generate(&self, request: &ChatRequest) -> String {
        let material = canonical_json_compact(request).unwrap_or_default();
        let digest = Sha256::digest(format!("{}:chat:{material}", self.seed).as_bytes());
        let prompt = request.last_user_content().unwrap_or_default();
        let sentiment = ["positive", "negative", "neutral"]
            .into_iter()
            .find(|s| prompt.contains(&format!("with a {s} sentiment")));
        let question = prompt.rsplit("\n\n").next().unwrap_or(prompt);

        let openers: &[&str] = match sentiment {
            Some("positive") => &["I really enjoy it.", "Overall it is great.", "I love it.", "It has been wonderful."],
            Some("negative") => &["Frankly, it frustrates me.", "Unfortunately, it falls short.", "I dislike it.", "It disappoints me."],
            Some(_) => &["It is okay.", "It is neither good nor bad.", "It depends.", "It is fine."],
            None => &["Honestly,", "For me,", "In my experience,", "I would say"],
        };
        let reasons = [
            "it saves me time every day",
            "it keeps my information organized",
            "it helps me stay connected with others",
            "it is convenient and easy to use",
            "it gives me useful insights",
            "it protects my privacy and security",
        ];
        let closings = [
            "",
            " Overall, I am satisfied.",
            " I would recommend it to others.",
            " That is the main reason.",
        ];
        let topic = topic_words(question);
        let topic = if topic.is_empty() {
            "this topic".to_string()
        } else {
            topic.join(" and ")
        };
        let opener = openers[digest[0] as usize % openers.len()];
        let reason = reasons[digest[1] as usize % reasons.len()];
        let closing = if request.temperature > 0.0 {
            closings[digest[2] as usize % closings.len()]
        } else {
            ""
        };
        let lead = if opener.ends_with('.') { "When" } else { "when" };
        format!("{opener} {lead} it comes to {topic}, {reason}.{closing}")
    }
}

const STOPWORDS: &[&str] = &[
    "about", "and", "any", "are", "can", "could", "describe", "did", "does", "explain", "for",
    "have", "how", "please", "should", "that", "the", "this", "what", "when", "which", "who",
    "why", "with", "would", "you", "your",
];

fn topic_words(question: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for w in question
        .split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
    {
        if w.len() >= 3 && !STOPWORDS.contains(&w.as_str()) && !out.contains(&w) {
            out.push(w);
        }
        if out.len() == 3 {
            break;
        }
    }
    out
}

impl ChatProvider for MockChatProvider {
    fn provider_id(&self) -> &str {
        MOCK_CHAT_ID
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(c) = &self.canned {
            return Ok(c.clone());
        }
        Ok(match request.purpose {
            PurposeTag::Detect => self.detect(request),
            PurposeTag::GenerateSignature => self.generate(request),
        })
    }
}

pub struct HashEmbedder {
    seed: u64,
    dim: usize,
    id: String,
    calls: AtomicU64,
}

impl HashEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder {
            seed,
            dim,
            id: format!("mock-hash-d{dim}-s{seed}"),
            calls: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn unit(&self, kind: &str, s: &str, out: &mut [f64], weight: f64) {
        let mut block = [0u8; 32];
        for (i, slot) in out.iter_mut().enumerate() {
            if i % 4 == 0 {
                block = Sha256::digest(format!("{}:{kind}:{s}:{}", self.seed, i / 4).as_bytes()).into();
            }
            let off = 8 * (i % 4);
            let word = u64::from_be_bytes(block[off..off + 8].try_into().expect("8 bytes"));
            let top = (word >> 44) as f64;
            *slot += weight * (top / (1u64 << 19) as f64 - 1.0);
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let trimmed = text.trim();
        let lower = trimmed.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens.push(&lower);
        }
        let mut v = vec![0.0; self.dim];
        for t in tokens {
            self.unit("tok", t, &mut v, 1.0);
        }
        self.unit("text", trimmed, &mut v, 0.25);
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(self.vector(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::types::Message;

    #[test]
    fn embedder_is_deterministic() {
        let e = HashEmbedder::new(7, 16);
        assert_eq!(e.vector("I use it daily."), e.vector("I use it daily."));
        assert_eq!(e.vector("I use it daily."), HashEmbedder::new(7, 16).vector("I use it daily."));
        assert_ne!(e.vector("I use it daily."), HashEmbedder::new(8, 16).vector("I use it daily."));
        assert!(e.vector("x").iter().all(|v| v.is_finite()));
    }

    #[test]
    fn word_order_still_distinguishes() {
        let e = HashEmbedder::new(1, 8);
        assert_ne!(e.vector("hello world"), e.vector("world hello"));
    }

    #[test]
    fn canned_and_detect() {
        let m = MockChatProvider::new(0).with_canned("AI");
        let req = ChatRequest::new("m", 0.0, vec![Message::user("x")], PurposeTag::Detect, "v").unwrap();
        assert_eq!(m.complete(&req).unwrap(), "AI");
        assert_eq!(m.calls(), 1);
    }

    #[test]
    fn generation_depends_on_cell() {
        let m = MockChatProvider::new(3);
        let mk = |model: &str, t: f64| {
            ChatRequest::new(model, t, vec![Message::user("Why do you use this app?")], PurposeTag::GenerateSignature, "basic-v1").unwrap()
        };
        let a = m.complete(&mk("gpt-4", 0.0)).unwrap();
        assert_eq!(a, m.complete(&mk("gpt-4", 0.0)).unwrap());
        assert!(a.contains("use and app"), "{a}");
        let texts: std::collections::HashSet<String> = ["gpt-4", "gpt-4o", "gpt-3.5-turbo", "gpt-4o-mini"]
            .iter()
            .flat_map(|model| [0.0, 0.25, 0.5, 0.75, 1.0].map(|t| m.complete(&mk(model, t)).unwrap()))
            .collect();
        assert!(texts.len() > 1);
    }
}
