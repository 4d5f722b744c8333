use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{DefinitionError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub model: String,
    pub prompt: String,
    pub text: String,
    pub timestamp: u64,
}

#[derive(Debug, Default)]
struct Inner {
    entries: HashMap<(String, String), CacheEntry>,
    log: Option<File>,
}

/// Generation results keyed by (model tag, prompt text), persisted as
/// line-delimited JSON appended one entry at a time.
#[derive(Debug, Default)]
pub struct GenerationCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl GenerationCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads every entry of `path` (if present) and appends new ones to it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry =
                    serde_json::from_str(&line).map_err(|e| DefinitionError::Store {
                        line: i + 1,
                        message: format!("{}: {e}", path.display()),
                    })?;
                entries.insert((entry.model.clone(), entry.prompt.clone()), entry);
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(GenerationCache {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                entries,
                log: Some(log),
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

    pub fn get(&self, model: &str, prompt: &str) -> Option<CacheEntry> {
        self.inner
            .lock()
            .unwrap()
            .entries
            .get(&(model.to_string(), prompt.to_string()))
            .cloned()
    }

    pub fn insert(&self, entry: CacheEntry) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(log) = inner.log.as_mut() {
            let mut line = serde_json::to_vec(&entry).map_err(std::io::Error::from)?;
            line.push(b'\n');
            log.write_all(&line)?;
        }
        inner
            .entries
            .insert((entry.model.clone(), entry.prompt.clone()), entry);
        Ok(())
    }
}
