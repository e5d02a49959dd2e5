//! Durable response cache: one JSONL file per (prompt fingerprint, group),
//! named `<prompt-fingerprint>.<group>.jsonl`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::SampleGroup;

/// One cached draw. These exact fields form the on-disk line format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub text: String,
    pub group: SampleGroup,
    pub draw_index: usize,
    pub seed: u64,
    pub created_at: u64,
    pub gen_fingerprint: String,
}

/// File-backed sample store. Writes are serialized per cache; records for
/// one key are written in a single atomic replace.
pub struct SampleCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl SampleCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn file_path(&self, prompt_fingerprint: &str, group: SampleGroup) -> PathBuf {
        self.dir
            .join(format!("{prompt_fingerprint}.{group}.jsonl"))
    }

    /// Records for a key, or None when fewer than k exist.
    ///
    /// On a hit, returns exactly the first k records ordered by draw index.
    /// Never touches the network.
    pub fn load(
        &self,
        prompt_fingerprint: &str,
        group: SampleGroup,
        k: usize,
    ) -> Result<Option<Vec<CacheRecord>>> {
        let path = self.file_path(prompt_fingerprint, group);
        if !path.exists() {
            return Ok(None);
        }
        let file = File::open(&path)?;
        let mut records = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CacheRecord =
                serde_json::from_str(&line).map_err(|e| Error::CacheCorruption {
                    file: path.clone(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            records.push(record);
        }
        if records.len() < k {
            return Ok(None);
        }
        records.sort_by_key(|r| r.draw_index);
        records.truncate(k);
        Ok(Some(records))
    }

    /// Replace the file for a key with these records (write-through).
    pub fn store(
        &self,
        prompt_fingerprint: &str,
        group: SampleGroup,
        records: &[CacheRecord],
    ) -> Result<()> {
        let _guard = self.write_lock.lock().expect("cache write lock");
        std::fs::create_dir_all(&self.dir)?;
        let path = self.file_path(prompt_fingerprint, group);
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut file = std::io::BufWriter::new(File::create(&tmp)?);
            for record in records {
                writeln!(file, "{}", serde_json::to_string(record)?)?;
            }
        }
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize) -> CacheRecord {
        CacheRecord {
            text: format!("text-{i}"),
            group: SampleGroup::Original,
            draw_index: i,
            seed: 7,
            created_at: 0,
            gen_fingerprint: "g".into(),
        }
    }

    #[test]
    fn empty_cache_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        assert!(cache.load("fp", SampleGroup::Original, 1).unwrap().is_none());
    }

    #[test]
    fn prefix_rule_returns_first_k_by_draw_index() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        let mut records: Vec<CacheRecord> = (0..20).map(record).collect();
        records.reverse(); // storage order must not matter
        cache.store("fp", SampleGroup::Original, &records).unwrap();

        let loaded = cache.load("fp", SampleGroup::Original, 10).unwrap().unwrap();
        assert_eq!(loaded.len(), 10);
        for (i, r) in loaded.iter().enumerate() {
            assert_eq!(r.draw_index, i);
        }
    }

    #[test]
    fn partial_cache_never_shrinks_k() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        let records: Vec<CacheRecord> = (0..5).map(record).collect();
        cache.store("fp", SampleGroup::Original, &records).unwrap();
        assert!(cache.load("fp", SampleGroup::Original, 10).unwrap().is_none());
        assert!(cache.load("fp", SampleGroup::Original, 5).unwrap().is_some());
    }

    #[test]
    fn corrupt_line_is_reported_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        cache
            .store("fp", SampleGroup::Perturbed(1), &[record(0)])
            .unwrap();
        let path = cache.file_path("fp", SampleGroup::Perturbed(1));
        let mut content = std::fs::read_to_string(&path).unwrap();
        content.push_str("{broken\n");
        std::fs::write(&path, content).unwrap();

        match cache.load("fp", SampleGroup::Perturbed(1), 1) {
            Err(Error::CacheCorruption { line, file, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(file, path);
            }
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn groups_are_distinct_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        cache.store("fp", SampleGroup::Original, &[record(0)]).unwrap();
        assert!(cache.load("fp", SampleGroup::Perturbed(0), 1).unwrap().is_none());
    }
}
