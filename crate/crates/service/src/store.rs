//! File-backed label store. Every change rewrites the labels file through a
//! temp file and rename; the replaced record goes to an append-only audit log.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use atk_core::data::SegmentLabels;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::{Result, ServiceError};

#[derive(Debug, Serialize, Deserialize)]
pub struct AuditEntry {
    pub replaced_at: DateTime<Utc>,
    pub previous: SegmentLabels,
}

#[derive(Debug)]
pub struct LabelStore {
    path: PathBuf,
    audit_path: PathBuf,
    records: BTreeMap<String, SegmentLabels>,
}

impl LabelStore {
    /// Opens the store; a missing labels file means no labels yet.
    pub fn open(path: &Path, audit_path: &Path) -> Result<Self> {
        let records = if path.exists() {
            let list: Vec<SegmentLabels> = atk_core::data::read_json(path)?;
            list.into_iter().map(|l| (l.segment_id.clone(), l)).collect()
        } else {
            BTreeMap::new()
        };
        Ok(LabelStore {
            path: path.to_path_buf(),
            audit_path: audit_path.to_path_buf(),
            records,
        })
    }

    pub fn get(&self, id: &str) -> Option<&SegmentLabels> {
        self.records.get(id)
    }

    /// Stores `labels` unless an identical record (ignoring `saved_at`) is
    /// already present, in which case the stored record is returned as is.
    pub fn put(&mut self, labels: SegmentLabels) -> Result<SegmentLabels> {
        if let Some(prev) = self.records.get(&labels.segment_id) {
            if prev.spans == labels.spans && prev.annotator == labels.annotator {
                return Ok(prev.clone());
            }
        }
        let mut next = self.records.clone();
        let previous = next.insert(labels.segment_id.clone(), labels.clone());
        if let Some(previous) = previous {
            self.append_audit(&AuditEntry {
                replaced_at: Utc::now(),
                previous,
            })?;
        }
        self.write_atomic(&next)?;
        self.records = next;
        Ok(labels)
    }

    fn append_audit(&self, entry: &AuditEntry) -> Result<()> {
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.audit_path)
            .map_err(|e| ServiceError::io(&self.audit_path, e))?;
        f.write_all(line.as_bytes())
            .and_then(|_| f.sync_data())
            .map_err(|e| ServiceError::io(&self.audit_path, e))
    }

    fn write_atomic(&self, records: &BTreeMap<String, SegmentLabels>) -> Result<()> {
        let list: Vec<&SegmentLabels> = records.values().collect();
        let text = serde_json::to_vec_pretty(&list)?;
        let dir = match self.path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| ServiceError::io(dir, e))?;
        tmp.write_all(&text)
            .and_then(|_| tmp.as_file().sync_all())
            .map_err(|e| ServiceError::io(tmp.path(), e))?;
        tmp.persist(&self.path)
            .map_err(|e| ServiceError::io(&self.path, e.error))?;
        if let Ok(d) = fs::File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }
}
