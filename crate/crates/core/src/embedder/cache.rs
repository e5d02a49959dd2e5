//! Durable embedding cache: one JSONL file, lines `{fingerprint, dim, values}`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CacheLine {
    fingerprint: String,
    dim: usize,
    values: Vec<f64>,
}

/// Append-only store keyed by source fingerprint.
pub struct EmbeddingCache {
    path: PathBuf,
    state: Mutex<HashMap<String, Vec<f64>>>,
}

impl EmbeddingCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            path: path.as_ref().to_path_buf(),
            state: Mutex::new(HashMap::new()),
        })
    }

    /// Load every existing line into memory. Corrupt lines are an error
    /// naming the file and line number.
    pub fn preload(&self) -> Result<()> {
        if !self.path.exists() {
            return Ok(());
        }
        let file = File::open(&self.path)?;
        let mut state = self.state.lock().expect("cache lock");
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CacheLine =
                serde_json::from_str(&line).map_err(|e| Error::CacheCorruption {
                    file: self.path.clone(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            state.insert(parsed.fingerprint, parsed.values);
        }
        Ok(())
    }

    pub fn get(&self, fingerprint: &str) -> Result<Option<Vec<f64>>> {
        Ok(self
            .state
            .lock()
            .expect("cache lock")
            .get(fingerprint)
            .cloned())
    }

    /// Insert and append to the backing file.
    pub fn put(&self, fingerprint: &str, values: &[f64]) -> Result<()> {
        let mut state = self.state.lock().expect("cache lock");
        if state.contains_key(fingerprint) {
            return Ok(());
        }
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let line = serde_json::to_string(&CacheLine {
            fingerprint: fingerprint.to_string(),
            dim: values.len(),
            values: values.to_vec(),
        })?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(file, "{line}")?;
        state.insert(fingerprint.to_string(), values.to_vec());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
