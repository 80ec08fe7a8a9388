//! Append-only JSONL store of augmentation records.
//!
//! The in-memory index is rebuilt from the log on open. Existing keys are
//! never overwritten.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AugmentError, AugmentationKind, AugmentationRecord};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub example_id: String,
    pub kind: AugmentationKind,
    pub generator: String,
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.example_id, self.kind, self.generator)
    }
}

#[derive(Debug, Default)]
pub struct AugmentationCache {
    path: Option<PathBuf>,
    index: BTreeMap<CacheKey, AugmentationRecord>,
    conflicts: usize,
}

impl AugmentationCache {
    /// A cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        AugmentationCache::default()
    }

    /// Opens or creates the log at `path`. Torn or malformed lines are
    /// skipped; when a key appears twice the first record wins.
    pub fn open(path: &Path) -> Result<Self, AugmentError> {
        let mut cache = AugmentationCache {
            path: Some(path.to_path_buf()),
            ..Default::default()
        };
        cache.rebuild_index()?;
        Ok(cache)
    }

    fn io_err(&self, source: std::io::Error) -> AugmentError {
        AugmentError::Io {
            path: self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            source,
        }
    }

    pub fn rebuild_index(&mut self) -> Result<(), AugmentError> {
        self.index.clear();
        self.conflicts = 0;
        let Some(path) = self.path.clone() else {
            return Ok(());
        };
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(self.io_err(e)),
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| self.io_err(e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<AugmentationRecord>(&line) {
                Ok(record) => {
                    let key = record.key();
                    match self.index.entry(key) {
                        Entry::Occupied(e) => {
                            log::warn!(
                                "{}:{}: duplicate cache key {}, keeping the first",
                                path.display(),
                                i + 1,
                                e.key()
                            );
                            self.conflicts += 1;
                        }
                        Entry::Vacant(e) => {
                            e.insert(record);
                        }
                    }
                }
                Err(e) => log::warn!("{}:{}: unreadable cache line skipped: {e}", path.display(), i + 1),
            }
        }
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Duplicate keys found in the log by the last index rebuild.
    pub fn conflicts(&self) -> usize {
        self.conflicts
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn get(&self, key: &CacheKey) -> Option<&AugmentationRecord> {
        self.index.get(key)
    }

    /// All records for one example and kind, ordered by generator name.
    pub fn records_for(&self, example_id: &str, kind: AugmentationKind) -> Vec<AugmentationRecord> {
        let lo = CacheKey {
            example_id: example_id.to_string(),
            kind,
            generator: String::new(),
        };
        self.index
            .range(lo..)
            .take_while(|(k, _)| k.example_id == example_id && k.kind == kind)
            .map(|(_, r)| r.clone())
            .collect()
    }

    pub fn put(&mut self, record: AugmentationRecord) -> Result<(), AugmentError> {
        if record.text.is_empty() {
            return Err(AugmentError::Contract(format!(
                "refusing to store empty text for {}",
                record.key()
            )));
        }
        let key = record.key();
        if self.index.contains_key(&key) {
            return Err(AugmentError::DuplicateKey(key));
        }
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&record).expect("record serializes");
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| self.io_err(e))?;
            writeln!(file, "{line}").map_err(|e| self.io_err(e))?;
        }
        self.index.insert(key, record);
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &AugmentationRecord> {
        self.index.values()
    }
}
