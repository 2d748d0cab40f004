//! Append-only session persistence.
//!
//! The store is a JSON-lines file: every line is one self-describing record
//! `{"format": "covbal-session", "version": 1, "saved_at": <unix secs>,
//! "session": {...}}` holding a full session snapshot. Records are only ever
//! appended; on load the last record per session id wins. A truncated final
//! line (from a crash mid-write) is skipped.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};
use crate::session::Session;

pub const FORMAT: &str = "covbal-session";
pub const VERSION: u32 = 1;
const FILE_NAME: &str = "sessions.jsonl";

#[derive(Serialize, Deserialize)]
struct Record {
    format: String,
    version: u32,
    saved_at: u64,
    session: Session,
}

/// Session snapshots on disk, or nowhere for an in-memory service.
pub struct Store {
    path: Option<PathBuf>,
    file: Mutex<Option<File>>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self { path: None, file: Mutex::new(None) }
    }

    pub fn open(dir: &Path) -> ServiceResult<Self> {
        std::fs::create_dir_all(dir).map_err(io)?;
        let path = dir.join(FILE_NAME);
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(Self { path: Some(path), file: Mutex::new(Some(file)) })
    }

    pub fn append(&self, s: &Session) -> ServiceResult<()> {
        let mut guard = self.file.lock().expect("store lock poisoned");
        let Some(file) = guard.as_mut() else { return Ok(()) };
        let record = Record { format: FORMAT.into(), version: VERSION, saved_at: s.updated_at, session: s.clone() };
        let mut line = serde_json::to_vec(&record).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push(b'\n');
        file.write_all(&line).map_err(io)?;
        file.flush().map_err(io)
    }

    /// Latest snapshot of every stored session.
    pub fn load(&self) -> ServiceResult<BTreeMap<String, Session>> {
        let Some(path) = &self.path else { return Ok(BTreeMap::new()) };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut out = BTreeMap::new();
        for line in reader.lines() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let Ok(rec) = serde_json::from_str::<Record>(&line) else { continue };
            if rec.format == FORMAT && rec.version == VERSION {
                out.insert(rec.session.id.clone(), rec.session);
            }
        }
        Ok(out)
    }
}

fn io(e: std::io::Error) -> ServiceError {
    ServiceError::Internal(format!("session store: {e}"))
}
