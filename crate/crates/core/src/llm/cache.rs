//! Content-addressed response cache shared by the gateway and the knowledge
//! chain. On disk it is one JSON file per key, named by the key.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

#[derive(Debug, Default)]
pub struct Cache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, Value>>,
}

impl Cache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            mem: Mutex::default(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// SHA-256 over the operation name and the canonical JSON of its inputs.
    pub fn key(operation: &str, inputs: &impl Serialize) -> String {
        let canonical = serde_json::to_string(inputs).expect("cache inputs serialize");
        let mut hasher = Sha256::new();
        hasher.update(operation.as_bytes());
        hasher.update([0u8]);
        hasher.update(canonical.as_bytes());
        hex::encode(hasher.finalize())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        if let Some(v) = self.mem.lock().unwrap().get(key) {
            return serde_json::from_value(v.clone()).ok();
        }
        let path = self.path(key)?;
        let bytes = fs::read(&path).ok()?;
        let value: Value = match serde_json::from_slice(&bytes) {
            Ok(v) => v,
            Err(e) => {
                tracing::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                return None;
            }
        };
        let out = serde_json::from_value(value.clone()).ok();
        self.mem.lock().unwrap().insert(key.to_owned(), value);
        out
    }

    /// Stores a value; the disk write goes through a temp file and a rename so
    /// readers never observe a partial entry.
    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> io::Result<()> {
        let value = serde_json::to_value(value).map_err(io::Error::other)?;
        if let Some(path) = self.path(key) {
            let dir = path.parent().expect("cache entry has a parent");
            let mut tmp = NamedTempFile::new_in(dir)?;
            tmp.write_all(serde_json::to_string(&value)?.as_bytes())?;
            tmp.persist(&path).map_err(|e| e.error)?;
        }
        self.mem.lock().unwrap().insert(key.to_owned(), value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mem.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
