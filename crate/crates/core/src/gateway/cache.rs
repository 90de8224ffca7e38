//! Content-addressed response cache.
//!
//! On disk every entry is one file named by its digest, holding canonical JSON
//! `{request, response, stored_at}`. Writes go through a temp file and are
//! skipped when the key already exists, so each key is stored at most once.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::types::CacheKey;
use crate::error::{Error, Result};
use crate::report::render::{canonical_json, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: Value,
    pub response: Value,
    pub stored_at: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheContents {
    pub entries: usize,
}

enum Backend {
    Memory(Mutex<HashMap<CacheKey, CacheEntry>>),
    Disk(PathBuf),
}

pub struct ResponseCache {
    backend: Backend,
    key_locks: Mutex<HashMap<CacheKey, Arc<Mutex<()>>>>,
    // serializes the exists-check + rename of put_if_absent
    store_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            backend: Backend::Memory(Mutex::new(HashMap::new())),
            key_locks: Mutex::new(HashMap::new()),
            store_lock: Mutex::new(()),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache {
            backend: Backend::Disk(dir),
            key_locks: Mutex::new(HashMap::new()),
            store_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        match &self.backend {
            Backend::Disk(d) => Some(d),
            Backend::Memory(_) => None,
        }
    }

    /// A mutex private to `key`; holding it makes lookup-then-fill atomic per key.
    pub fn key_lock(&self, key: &CacheKey) -> Arc<Mutex<()>> {
        let mut locks = self.key_locks.lock().expect("cache lock poisoned");
        locks.entry(key.clone()).or_default().clone()
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>> {
        match &self.backend {
            Backend::Memory(m) => Ok(m.lock().expect("cache lock poisoned").get(key).cloned()),
            Backend::Disk(dir) => {
                let path = dir.join(key.as_str());
                let raw = match fs::read_to_string(&path) {
                    Ok(raw) => raw,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
                    Err(e) => return Err(Error::io(&path, e)),
                };
                serde_json::from_str(&raw)
                    .map(Some)
                    .map_err(|e| Error::Corrupted {
                        path,
                        message: e.to_string(),
                    })
            }
        }
    }

    /// Stores `entry` unless the key is already present. Returns whether it stored.
    pub fn put_if_absent(&self, key: &CacheKey, entry: &CacheEntry) -> Result<bool> {
        let _guard = self.store_lock.lock().expect("cache lock poisoned");
        match &self.backend {
            Backend::Memory(m) => {
                let mut m = m.lock().expect("cache lock poisoned");
                if m.contains_key(key) {
                    return Ok(false);
                }
                m.insert(key.clone(), entry.clone());
                Ok(true)
            }
            Backend::Disk(dir) => {
                let path = dir.join(key.as_str());
                if path.exists() {
                    return Ok(false);
                }
                write_atomic(&path, canonical_json(entry)?.as_bytes())?;
                Ok(true)
            }
        }
    }

    pub fn contents(&self) -> Result<CacheContents> {
        let entries = match &self.backend {
            Backend::Memory(m) => m.lock().expect("cache lock poisoned").len(),
            Backend::Disk(dir) => fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok())
                .filter(|e| {
                    let name = e.file_name();
                    let name = name.to_string_lossy();
                    name.len() == 64 && name.chars().all(|c| c.is_ascii_hexdigit())
                })
                .count(),
        };
        Ok(CacheContents { entries })
    }
}
