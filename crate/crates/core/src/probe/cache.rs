use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One scored `(prompt, token)` pair. Tokens the backend could not score are
/// stored with probability 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub model_id: String,
    pub prompt_sha256: String,
    pub prompt: String,
    pub token: String,
    pub probability: f64,
}

impl CacheRecord {
    pub fn new(model_id: &str, prompt: &str, token: &str, probability: f64) -> Self {
        CacheRecord {
            model_id: model_id.to_string(),
            prompt_sha256: prompt_hash(prompt),
            prompt: prompt.to_string(),
            token: token.to_string(),
            probability,
        }
    }

    fn key(&self) -> CacheKey {
        (
            self.model_id.clone(),
            self.prompt_sha256.clone(),
            self.token.clone(),
        )
    }
}

type CacheKey = (String, String, String);

#[derive(Default)]
struct Inner {
    entries: HashMap<CacheKey, f64>,
    writer: Option<File>,
}

/// Append-only JSON-lines store of token probabilities keyed by
/// (model id, prompt hash, token).
pub struct ProbeCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl ProbeCache {
    pub fn in_memory() -> Self {
        ProbeCache {
            path: None,
            inner: Mutex::new(Inner::default()),
        }
    }

    /// Loads existing records from `path` (if present) and appends new ones to it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| {
                    Error::Config(format!(
                        "{}:{}: bad cache record: {e}",
                        path.display(),
                        i + 1
                    ))
                })?;
                entries.insert(rec.key(), rec.probability);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(ProbeCache {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                entries,
                writer: Some(writer),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, model_id: &str, prompt: &str, token: &str) -> Option<f64> {
        let key = (model_id.to_string(), prompt_hash(prompt), token.to_string());
        self.inner.lock().unwrap().entries.get(&key).copied()
    }

    /// Stores records in the given order, skipping keys already present.
    pub fn insert(&self, records: &[CacheRecord]) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        let mut seen = HashSet::new();
        let mut buf = String::new();
        for rec in records {
            let key = rec.key();
            if inner.entries.contains_key(&key) || !seen.insert(key.clone()) {
                continue;
            }
            buf.push_str(&serde_json::to_string(rec)?);
            buf.push('\n');
            inner.entries.insert(key, rec.probability);
        }
        if let (Some(w), false) = (inner.writer.as_mut(), buf.is_empty()) {
            let path = self.path.as_deref().unwrap_or(Path::new(""));
            w.write_all(buf.as_bytes())
                .map_err(|e| Error::io(path, e))?;
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}
