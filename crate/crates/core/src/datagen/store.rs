//! Append-only record files for the datagen pipelines.
//!
//! Each file is a JSON-lines log. Updates (review decisions) append a new
//! version of a record; readers keep the last version per key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::clues::ClueRecord;
use super::dialog::DialogRecord;
use super::{DatagenError, RejectReason};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    /// `repository`, `clues` or `dialogs`.
    pub stage: String,
    pub id: String,
    /// `rejected` for generation failures, `quarantined` for unusable inputs.
    pub disposition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replies: Vec<String>,
    pub pipeline_version: String,
    pub prompt_version: String,
}

pub struct RecordStore {
    dir: PathBuf,
}

fn last_by_key<T, F: Fn(&T) -> String>(items: Vec<T>, key: F) -> Vec<T> {
    let mut order: Vec<String> = Vec::new();
    let mut latest: BTreeMap<String, T> = BTreeMap::new();
    for it in items {
        let k = key(&it);
        if !latest.contains_key(&k) {
            order.push(k.clone());
        }
        latest.insert(k, it);
    }
    order.into_iter().map(|k| latest.remove(&k).expect("key recorded")).collect()
}

impl RecordStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, DatagenError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| DatagenError::Input {
            path: dir.display().to_string(),
            msg: e.to_string(),
        })?;
        Ok(RecordStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn clues_path(&self) -> PathBuf {
        self.dir.join("clues.jsonl")
    }

    pub fn dialogs_path(&self) -> PathBuf {
        self.dir.join("dialogs.jsonl")
    }

    pub fn quarantine_path(&self) -> PathBuf {
        self.dir.join("quarantine.jsonl")
    }

    /// Current clue records, one per sample, in first-written order.
    pub fn clues(&self) -> Result<Vec<ClueRecord>, DatagenError> {
        Ok(last_by_key(jsonl::read_if_exists(&self.clues_path())?, |r: &ClueRecord| r.sample_id.clone()))
    }

    pub fn dialogs(&self) -> Result<Vec<DialogRecord>, DatagenError> {
        Ok(last_by_key(jsonl::read_if_exists(&self.dialogs_path())?, |r: &DialogRecord| r.question_id.clone()))
    }

    pub fn quarantine(&self) -> Result<Vec<QuarantineEntry>, DatagenError> {
        Ok(last_by_key(jsonl::read_if_exists(&self.quarantine_path())?, |q: &QuarantineEntry| {
            format!("{}/{}", q.stage, q.id)
        }))
    }

    pub fn append_clue(&self, r: &ClueRecord) -> Result<(), DatagenError> {
        Ok(jsonl::append(&self.clues_path(), r)?)
    }

    pub fn append_dialog(&self, r: &DialogRecord) -> Result<(), DatagenError> {
        Ok(jsonl::append(&self.dialogs_path(), r)?)
    }

    pub fn append_quarantine(&self, q: &QuarantineEntry) -> Result<(), DatagenError> {
        Ok(jsonl::append(&self.quarantine_path(), q)?)
    }

    pub fn find_clue(&self, sample_id: &str) -> Result<ClueRecord, DatagenError> {
        self.clues()?
            .into_iter()
            .find(|r| r.sample_id == sample_id)
            .ok_or_else(|| DatagenError::Review(format!("no clue record with id {sample_id:?}")))
    }

    /// Applies a review decision and appends the new record version.
    pub fn approve(&self, sample_id: &str) -> Result<ClueRecord, DatagenError> {
        let mut r = self.find_clue(sample_id)?;
        r.approve()?;
        self.append_clue(&r)?;
        Ok(r)
    }

    pub fn reject(&self, sample_id: &str, reason: &str) -> Result<ClueRecord, DatagenError> {
        let mut r = self.find_clue(sample_id)?;
        r.reject(reason)?;
        self.append_clue(&r)?;
        Ok(r)
    }
}
