//! The single path through which chat completions and embeddings are requested.
//!
//! Every call is cache-through: a hit never reaches the provider. Misses are
//! bounded by an in-flight limit per provider, retried on transient errors, and
//! stored at most once per key.

mod cache;
mod limit;
pub mod mock;
pub mod openai;
mod types;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use serde_json::{json, Value};

pub use cache::{CacheContents, CacheEntry, ResponseCache};
pub use limit::{InFlightLimit, RetryPolicy};
pub use types::{
    build_cache_key, CacheInput, CacheKey, ChatRequest, ChatResult, EmbeddingVector, Message,
    PurposeTag, Role,
};

use crate::error::{Error, Result};

pub trait ChatProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Source of `stored_at` timestamps for new cache entries.
#[derive(Debug, Clone)]
pub enum Clock {
    System,
    Fixed(String),
}

impl Clock {
    pub fn now(&self) -> String {
        match self {
            Clock::System => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            Clock::Fixed(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CallStats {
    pub chat_calls: u64,
    pub embed_calls: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl CallStats {
    pub fn provider_calls(&self) -> u64 {
        self.chat_calls + self.embed_calls
    }
}

#[derive(Default)]
struct Counters {
    chat_calls: AtomicU64,
    embed_calls: AtomicU64,
    cache_hits: AtomicU64,
    cache_misses: AtomicU64,
}

struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    limit: InFlightLimit,
}

pub struct Gateway {
    chat: Option<(Arc<dyn ChatProvider>, InFlightLimit)>,
    embedders: BTreeMap<String, Embedder>,
    cache: ResponseCache,
    retry: RetryPolicy,
    max_in_flight: usize,
    clock: Clock,
    dims: Mutex<HashMap<String, usize>>,
    counters: Counters,
}

pub struct GatewayBuilder {
    chat: Option<Arc<dyn ChatProvider>>,
    embedders: Vec<Arc<dyn EmbeddingProvider>>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    max_in_flight: usize,
    clock: Clock,
}

impl Default for GatewayBuilder {
    fn default() -> Self {
        GatewayBuilder {
            chat: None,
            embedders: Vec::new(),
            cache: None,
            retry: RetryPolicy::default(),
            max_in_flight: 5,
            clock: Clock::System,
        }
    }
}

impl GatewayBuilder {
    pub fn chat(mut self, provider: Arc<dyn ChatProvider>) -> Self {
        self.chat = Some(provider);
        self
    }

    pub fn embedder(mut self, provider: Arc<dyn EmbeddingProvider>) -> Self {
        self.embedders.push(provider);
        self
    }

    pub fn cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn build(self) -> Gateway {
        let n = self.max_in_flight;
        Gateway {
            chat: self.chat.map(|p| (p, InFlightLimit::new(n))),
            embedders: self
                .embedders
                .into_iter()
                .map(|p| {
                    (
                        p.provider_id().to_string(),
                        Embedder {
                            provider: p,
                            limit: InFlightLimit::new(n),
                        },
                    )
                })
                .collect(),
            cache: self.cache.unwrap_or_else(ResponseCache::in_memory),
            retry: self.retry,
            max_in_flight: n,
            clock: self.clock,
            dims: Mutex::new(HashMap::new()),
            counters: Counters::default(),
        }
    }
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    pub fn chat_provider_id(&self) -> Option<&str> {
        self.chat.as_ref().map(|(p, _)| p.provider_id())
    }

    pub fn embedding_provider_ids(&self) -> Vec<&str> {
        self.embedders.keys().map(String::as_str).collect()
    }

    /// The only registered embedder, if exactly one is configured.
    pub fn default_embedder_id(&self) -> Option<&str> {
        if self.embedders.len() == 1 {
            self.embedders.keys().next().map(String::as_str)
        } else {
            None
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn stats(&self) -> CallStats {
        let c = &self.counters;
        CallStats {
            chat_calls: c.chat_calls.load(Ordering::SeqCst),
            embed_calls: c.embed_calls.load(Ordering::SeqCst),
            cache_hits: c.cache_hits.load(Ordering::SeqCst),
            cache_misses: c.cache_misses.load(Ordering::SeqCst),
        }
    }

    pub fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResult> {
        request.validate()?;
        let (provider, limit) = self
            .chat
            .as_ref()
            .ok_or_else(|| Error::Config("no chat provider configured".into()))?;
        let input = CacheInput::Chat(request);
        let key = build_cache_key(provider.provider_id(), input);
        let lock = self.cache.key_lock(&key);
        let _held = lock.lock().expect("key lock poisoned");

        if let Some(entry) = self.cache.get(&key)? {
            self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
            let text = entry.response.as_str().ok_or_else(|| Error::Corrupted {
                path: self.entry_path(&key),
                message: "chat response is not a string".into(),
            })?;
            return Ok(ChatResult {
                text: text.to_string(),
                model_id: request.model_id.clone(),
                cached: true,
                stored_at: entry.stored_at,
            });
        }
        self.counters.cache_misses.fetch_add(1, Ordering::SeqCst);

        let text = {
            let _permit = limit.acquire();
            self.retry.run(|| {
                self.counters.chat_calls.fetch_add(1, Ordering::SeqCst);
                provider.complete(request)
            })?
        };
        let entry = CacheEntry {
            request: canonical_value(&input, provider.provider_id()),
            response: Value::String(text.clone()),
            stored_at: self.clock.now(),
        };
        self.cache.put_if_absent(&key, &entry)?;
        Ok(ChatResult {
            text,
            model_id: request.model_id.clone(),
            cached: false,
            stored_at: entry.stored_at,
        })
    }

    pub fn embed_text(&self, text: &str, provider_id: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let embedder = self.embedders.get(provider_id).ok_or_else(|| {
            Error::Config(format!("embedding provider {provider_id:?} is not configured"))
        })?;
        let input = CacheInput::Embed(text);
        let key = build_cache_key(provider_id, input);
        let lock = self.cache.key_lock(&key);
        let _held = lock.lock().expect("key lock poisoned");

        let values = match self.cache.get(&key)? {
            Some(entry) => {
                self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
                serde_json::from_value::<Vec<f64>>(entry.response["values"].clone()).map_err(
                    |e| Error::Corrupted {
                        path: self.entry_path(&key),
                        message: e.to_string(),
                    },
                )?
            }
            None => {
                self.counters.cache_misses.fetch_add(1, Ordering::SeqCst);
                let values = {
                    let _permit = embedder.limit.acquire();
                    self.retry.run(|| {
                        self.counters.embed_calls.fetch_add(1, Ordering::SeqCst);
                        embedder.provider.embed(text)
                    })?
                };
                let vector = EmbeddingVector::new(values, provider_id)?;
                self.check_dim(provider_id, vector.dim())?;
                let entry = CacheEntry {
                    request: canonical_value(&input, provider_id),
                    response: json!({ "values": vector.values() }),
                    stored_at: self.clock.now(),
                };
                self.cache.put_if_absent(&key, &entry)?;
                return Ok(vector);
            }
        };
        let vector = EmbeddingVector::new(values, provider_id)?;
        self.check_dim(provider_id, vector.dim())?;
        Ok(vector)
    }

    fn check_dim(&self, provider_id: &str, dim: usize) -> Result<()> {
        let mut dims = self.dims.lock().expect("dims lock poisoned");
        match dims.get(provider_id) {
            Some(&expected) if expected != dim => Err(Error::DimensionDrift {
                provider: provider_id.to_string(),
                expected,
                actual: dim,
            }),
            Some(_) => Ok(()),
            None => {
                dims.insert(provider_id.to_string(), dim);
                Ok(())
            }
        }
    }

    fn entry_path(&self, key: &CacheKey) -> std::path::PathBuf {
        self.cache
            .dir()
            .map(|d| d.join(key.as_str()))
            .unwrap_or_else(|| key.as_str().into())
    }
}

fn canonical_value(input: &CacheInput<'_>, provider_id: &str) -> Value {
    serde_json::from_str(&input.canonical(provider_id)).expect("canonical key material is JSON")
}
