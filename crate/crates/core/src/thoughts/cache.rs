use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KcotError, Result};

/// SHA-256 of `generator_id + "\n" + prompt`, lowercase hex.
pub fn cache_key(generator_id: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(generator_id.as_bytes());
    h.update(b"\n");
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt: String,
    pub response: String,
    pub generator_id: String,
    pub created_at: String,
}

/// Content-addressed store of generated thoughts, one JSON file per key.
#[derive(Clone, Debug)]
pub struct ThoughtCache {
    dir: PathBuf,
}

impl ThoughtCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| KcotError::io(&dir, e))?;
        Ok(ThoughtCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Entry for `(generator_id, prompt)`, if present and consistent.
    pub fn get(&self, generator_id: &str, prompt: &str) -> Result<Option<CacheEntry>> {
        let path = self.path_for(&cache_key(generator_id, prompt));
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(KcotError::io(&path, e)),
        };
        let entry: CacheEntry =
            serde_json::from_str(&text).map_err(|e| KcotError::json(&path, e))?;
        if entry.prompt != prompt || entry.generator_id != generator_id {
            log::warn!("ignoring mismatched cache entry {}", path.display());
            return Ok(None);
        }
        Ok(Some(entry))
    }

    /// Writes to a temporary file in the same directory, then renames.
    pub fn put(&self, entry: &CacheEntry) -> Result<PathBuf> {
        let key = cache_key(&entry.generator_id, &entry.prompt);
        let path = self.path_for(&key);
        let tmp = self
            .dir
            .join(format!(".{key}.{}.tmp", std::process::id()));
        let body = serde_json::to_string_pretty(entry).map_err(|e| KcotError::json(&path, e))?;
        let mut f = fs::File::create(&tmp).map_err(|e| KcotError::io(&tmp, e))?;
        f.write_all(body.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .and_then(|_| f.sync_all())
            .map_err(|e| KcotError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| KcotError::io(&path, e))?;
        Ok(path)
    }
}
