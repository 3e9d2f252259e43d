use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AugVariantKind, AugmentError};

pub const DEFAULT_CACHE_FILE: &str = "aug_cache.jsonl";

/// Lowercase hex SHA-256 of the prompt text.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub study_id: String,
    pub kind: AugVariantKind,
    pub prompt_hash: String,
    pub completion: String,
    pub client: String,
    pub timestamp: u64,
}

type Key = (String, AugVariantKind, String);

/// Completion cache keyed by (study id, kind, prompt hash). Readers share a
/// lock; writers are serialized and append one JSON line per entry.
#[derive(Debug)]
pub struct AugCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<Key, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

impl AugCache {
    pub fn in_memory() -> Self {
        AugCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads an existing file (later lines win) and opens it for appending.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: CacheEntry = serde_json::from_str(&line).map_err(|err| {
                    AugmentError::Cache(format!("{}: line {}: {err}", path.display(), i + 1))
                })?;
                entries.insert((e.study_id.clone(), e.kind, e.prompt_hash.clone()), e);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(AugCache {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, study_id: &str, kind: AugVariantKind, prompt_hash: &str) -> Option<CacheEntry> {
        self.entries
            .read()
            .unwrap()
            .get(&(study_id.to_string(), kind, prompt_hash.to_string()))
            .cloned()
    }

    pub fn put(&self, entry: CacheEntry) -> Result<(), AugmentError> {
        let mut writer = self.writer.lock().unwrap();
        if let Some(f) = writer.as_mut() {
            let mut line = serde_json::to_string(&entry).map_err(|e| AugmentError::Cache(e.to_string()))?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.entries
            .write()
            .unwrap()
            .insert((entry.study_id.clone(), entry.kind, entry.prompt_hash.clone()), entry);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, kind: AugVariantKind, text: &str) -> CacheEntry {
        CacheEntry {
            study_id: id.into(),
            kind,
            prompt_hash: prompt_hash(text),
            completion: format!("out {text}"),
            client: "mock".into(),
            timestamp: 0,
        }
    }

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(
            prompt_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(DEFAULT_CACHE_FILE);
        {
            let c = AugCache::open(&p).unwrap();
            c.put(entry("a", AugVariantKind::Keywords, "p1")).unwrap();
            c.put(entry("b", AugVariantKind::Abstract, "p2")).unwrap();
        }
        let c = AugCache::open(&p).unwrap();
        assert_eq!(c.len(), 2);
        let e = c.get("a", AugVariantKind::Keywords, &prompt_hash("p1")).unwrap();
        assert_eq!(e.completion, "out p1");
        // a changed prompt misses
        assert!(c.get("a", AugVariantKind::Keywords, &prompt_hash("p1 v2")).is_none());
    }

    #[test]
    fn corrupt_line_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "{oops}\n").unwrap();
        let err = AugCache::open(&p).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn concurrent_writers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let c = AugCache::open(&p).unwrap();
        std::thread::scope(|s| {
            for t in 0..4 {
                let c = &c;
                s.spawn(move || {
                    for i in 0..25 {
                        c.put(entry(&format!("{t}-{i}"), AugVariantKind::Keywords, "p")).unwrap();
                    }
                });
            }
        });
        drop(c);
        let c = AugCache::open(&p).unwrap();
        assert_eq!(c.len(), 100);
    }
}
