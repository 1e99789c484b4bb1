//! Append-only JSONL annotation cache keyed by a request digest.
//!
//! Every successful annotation is appended as one JSON line; reruns look
//! the digest up before calling the endpoint. Appends go through a single
//! file handle guarded by the caller (see `annotate_batch`), each record
//! written and flushed as one line, so parallel annotation cannot
//! interleave partial records. A torn final line (crash mid-write) is
//! tolerated on open; corruption anywhere else is an error.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::annotator::AnnotateError;
use crate::labels::BiasVector;
use crate::util::sha256_hex;

/// One cached annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key_digest: String,
    pub article_id: String,
    pub model_id: String,
    pub raw_text: String,
    pub labels: BiasVector,
    pub timestamp: DateTime<Utc>,
}

/// Digest identifying one annotation request: article id, both prompt
/// texts, and the model id.
pub fn cache_key_digest(
    article_id: &str,
    system_text: &str,
    user_text: &str,
    model_id: &str,
) -> String {
    sha256_hex(&[
        article_id.as_bytes(),
        system_text.as_bytes(),
        user_text.as_bytes(),
        model_id.as_bytes(),
    ])
}

pub struct AnnotationCache {
    path: PathBuf,
    index: HashMap<String, CacheRecord>,
    file: File,
}

impl AnnotationCache {
    /// Open (creating if needed) the cache file and load its index.
    pub fn open(path: &Path) -> Result<Self, AnnotateError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| AnnotateError::CacheIo {
                    path: path.to_path_buf(),
                    source: e,
                })?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| AnnotateError::CacheIo {
                path: path.to_path_buf(),
                source: e,
            })?;
        let text = std::fs::read_to_string(path).map_err(|e| AnnotateError::CacheIo {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut index = HashMap::new();
        let lines: Vec<&str> = text.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<CacheRecord>(line) {
                Ok(record) => {
                    index.insert(record.key_digest.clone(), record);
                }
                Err(e) => {
                    if i + 1 == lines.len() {
                        // Torn final line from an interrupted append; skip it.
                        continue;
                    }
                    return Err(AnnotateError::CacheFormat {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: e.to_string(),
                    });
                }
            }
        }
        Ok(AnnotationCache {
            path: path.to_path_buf(),
            index,
            file,
        })
    }

    pub fn get(&self, digest: &str) -> Option<&CacheRecord> {
        self.index.get(digest)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record (a full line plus flush) and index it.
    pub fn append(&mut self, record: CacheRecord) -> Result<(), AnnotateError> {
        let mut line = serde_json::to_string(&record).expect("cache record serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| AnnotateError::CacheIo {
                path: self.path.clone(),
                source: e,
            })?;
        self.index.insert(record.key_digest.clone(), record);
        Ok(())
    }
}
