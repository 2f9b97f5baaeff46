//! Append-only disk cache for model responses.
//!
//! Layout: one JSONL shard per model under `<root>/<model>/records.jsonl`,
//! one [`InferenceRecord`] per line. The full key of a record is
//! `(model_name, question_id, sampling_digest)`; storing an already-present
//! key is a no-op, which is what makes evaluation reruns byte-stable.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use crate::error::{Error, Result};

use super::InferenceRecord;

type Key = (String, String, String);

pub struct ResponseCache {
    root: PathBuf,
    records: RwLock<HashMap<Key, InferenceRecord>>,
    /// Serializes append+insert so concurrent workers cannot interleave
    /// partial lines or double-write a key.
    writer: Mutex<()>,
}

/// Maps a model name onto a filesystem-safe shard directory name.
/// Model names routinely contain `/` (e.g. `org/model`).
pub fn shard_name(model_name: &str) -> String {
    model_name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

impl ResponseCache {
    /// Opens (or initializes) a cache rooted at `root`, loading every
    /// existing shard into memory.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        let mut records = HashMap::new();
        for entry in std::fs::read_dir(&root)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let shard = entry.path().join("records.jsonl");
            if !shard.exists() {
                continue;
            }
            let reader = BufReader::new(std::fs::File::open(&shard)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: InferenceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: shard.clone(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                records.insert(key_of(&record), record);
            }
        }
        Ok(ResponseCache {
            root,
            records: RwLock::new(records),
            writer: Mutex::new(()),
        })
    }

    pub fn get(&self, model_name: &str, question_id: &str, sampling_digest: &str) -> Option<InferenceRecord> {
        self.records
            .read()
            .unwrap()
            .get(&(
                model_name.to_string(),
                question_id.to_string(),
                sampling_digest.to_string(),
            ))
            .cloned()
    }

    /// Persists a record unless its key is already cached. Returns whether
    /// anything was written.
    pub fn store(&self, record: &InferenceRecord) -> Result<bool> {
        let key = key_of(record);
        let _write = self.writer.lock().unwrap();
        if self.records.read().unwrap().contains_key(&key) {
            return Ok(false);
        }
        let dir = self.root.join(shard_name(&record.model_name));
        std::fs::create_dir_all(&dir)?;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("records.jsonl"))?;
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        self.records.write().unwrap().insert(key, record.clone());
        Ok(true)
    }

    /// All cached records for one model, sorted by question id then digest.
    /// Sorting makes downstream snapshots independent of completion order.
    pub fn records_for_model(&self, model_name: &str) -> Vec<InferenceRecord> {
        let mut out: Vec<InferenceRecord> = self
            .records
            .read()
            .unwrap()
            .values()
            .filter(|r| r.model_name == model_name)
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            a.question_id
                .cmp(&b.question_id)
                .then_with(|| a.sampling_digest.cmp(&b.sampling_digest))
        });
        out
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn key_of(record: &InferenceRecord) -> Key {
    (
        record.model_name.clone(),
        record.question_id.clone(),
        record.sampling_digest.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(qid: &str, digest: &str) -> InferenceRecord {
        InferenceRecord {
            question_id: qid.into(),
            model_name: "org/toy-model".into(),
            sampling_digest: digest.into(),
            response_text: format!("reply to {qid}"),
            latency_ms: 3,
            created_at: 1_700_000_000,
        }
    }

    #[test]
    fn store_then_get_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert!(cache.store(&record("q1", "d1")).unwrap());
        let got = cache.get("org/toy-model", "q1", "d1").unwrap();
        assert_eq!(got.response_text, "reply to q1");
        assert!(cache.get("org/toy-model", "q1", "other").is_none());
    }

    #[test]
    fn duplicate_store_is_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert!(cache.store(&record("q1", "d1")).unwrap());
        assert!(!cache.store(&record("q1", "d1")).unwrap());
        let shard = dir.path().join(shard_name("org/toy-model")).join("records.jsonl");
        let contents = std::fs::read_to_string(shard).unwrap();
        assert_eq!(contents.lines().count(), 1);
    }

    #[test]
    fn reopen_sees_previous_records() {
        let dir = tempfile::tempdir().unwrap();
        {
            let cache = ResponseCache::open(dir.path()).unwrap();
            cache.store(&record("q1", "d1")).unwrap();
            cache.store(&record("q2", "d1")).unwrap();
        }
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.len(), 2);
        assert!(cache.get("org/toy-model", "q2", "d1").is_some());
    }

    #[test]
    fn model_listing_is_sorted_by_question_id() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        cache.store(&record("q10", "d1")).unwrap();
        cache.store(&record("q02", "d1")).unwrap();
        cache.store(&record("q07", "d1")).unwrap();
        let ids: Vec<String> = cache
            .records_for_model("org/toy-model")
            .into_iter()
            .map(|r| r.question_id)
            .collect();
        assert_eq!(ids, vec!["q02", "q07", "q10"]);
    }

    #[test]
    fn shard_names_are_filesystem_safe() {
        assert_eq!(shard_name("org/model:v1"), "org_model_v1");
        assert_eq!(shard_name("plain-model.v2"), "plain-model.v2");
    }
}
