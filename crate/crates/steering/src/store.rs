//! Append-only run persistence.
//!
//! Layout under the data directory:
//!
//! ```text
//! runs/<run_id>.jsonl   one event per line, in seq order
//! index.json            {"schema_version": 1, "runs": [RunRecord, ...]}
//! ```
//!
//! The index is a cache of folded records and is rewritten atomically
//! (temp file + rename) whenever a record changes.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clio_core::{RunEvent, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::RunRecord;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    schema_version: u32,
    runs: Vec<RunRecord>,
}

pub struct RunStore {
    dir: PathBuf,
    index: Mutex<BTreeMap<String, RunRecord>>,
}

impl RunStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let runs = dir.join("runs");
        fs::create_dir_all(&runs).map_err(io_err(&runs))?;
        let index_path = dir.join("index.json");
        let mut index = BTreeMap::new();
        if index_path.exists() {
            let raw = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
            let file: IndexFile = serde_json::from_str(&raw).map_err(|e| StoreError::Corrupt {
                path: index_path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
            for r in file.runs {
                index.insert(r.run_id.clone(), r);
            }
        }
        Ok(Self {
            dir,
            index: Mutex::new(index),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self, run_id: &str) -> PathBuf {
        self.dir.join("runs").join(format!("{run_id}.jsonl"))
    }

    /// Ids of every persisted log, sorted.
    pub fn run_ids(&self) -> Result<Vec<String>, StoreError> {
        let runs = self.dir.join("runs");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&runs).map_err(io_err(&runs))? {
            let path = entry.map_err(io_err(&runs))?.path();
            if path.extension().is_some_and(|x| x == "jsonl") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Reads a run log. A torn final line (no trailing newline) from a crash
    /// mid-write is dropped; any other unparsable line is an error.
    pub fn load_events(&self, run_id: &str) -> Result<Vec<RunEvent>, StoreError> {
        let path = self.log_path(run_id);
        let mut raw = String::new();
        File::open(&path)
            .and_then(|f| BufReader::new(f).read_to_string(&mut raw))
            .map_err(io_err(&path))?;
        let complete = raw.ends_with('\n');
        let lines: Vec<&str> = raw.lines().collect();
        let mut events = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<RunEvent>(line) {
                Ok(e) => events.push(e),
                Err(_) if i + 1 == lines.len() && !complete => {
                    tracing::warn!(path = %path.display(), "dropping torn final log line");
                }
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        path,
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(events)
    }

    /// Opens a run log for appending, creating it if needed.
    pub fn writer(&self, run_id: &str) -> Result<LogWriter, StoreError> {
        let path = self.log_path(run_id);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(LogWriter { path, file })
    }

    /// Replaces a run's log with `events` and indexes its folded record.
    /// Used for runs executed outside the service, e.g. by the bench harness.
    pub fn write_run(&self, run_id: &str, events: &[RunEvent]) -> Result<Option<RunRecord>, StoreError> {
        let path = self.log_path(run_id);
        let mut body = String::new();
        for e in events {
            body.push_str(&e.to_json_line());
            body.push('\n');
        }
        fs::write(&path, body).map_err(io_err(&path))?;
        let record = RunRecord::fold(events);
        if let Some(r) = &record {
            self.put_record(r)?;
        }
        Ok(record)
    }

    pub fn stored_record(&self, run_id: &str) -> Option<RunRecord> {
        self.lock().get(run_id).cloned()
    }

    pub fn records(&self) -> Vec<RunRecord> {
        self.lock().values().cloned().collect()
    }

    /// Upserts a record and rewrites the index.
    pub fn put_record(&self, record: &RunRecord) -> Result<(), StoreError> {
        let mut index = self.lock();
        index.insert(record.run_id.clone(), record.clone());
        let file = IndexFile {
            schema_version: SCHEMA_VERSION,
            runs: index.values().cloned().collect(),
        };
        let path = self.dir.join("index.json");
        let tmp = self.dir.join("index.json.tmp");
        let body = serde_json::to_vec_pretty(&file).expect("index serializes");
        fs::write(&tmp, body).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, RunRecord>> {
        self.index.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    /// Writes one event line and flushes it.
    pub fn append(&mut self, event: &RunEvent) -> Result<(), StoreError> {
        let mut line = event.to_json_line();
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(io_err(&self.path))
    }
}

/// Reads events from any JSON Lines reader, e.g. an exported log.
pub fn read_events(reader: impl BufRead) -> Result<Vec<RunEvent>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}
