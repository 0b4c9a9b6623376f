use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use thiserror::Error;

use super::AnnotationRecord;
use crate::corpus::Label;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("annotation store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("annotation store {path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Default)]
struct State {
    log: Vec<AnnotationRecord>,
    live: HashMap<(String, String), usize>,
    next_timestamp: u64,
}

impl State {
    fn apply(&mut self, record: AnnotationRecord) {
        self.next_timestamp = self.next_timestamp.max(record.timestamp + 1);
        let key = (record.tweet_id.clone(), record.annotator_id.clone());
        let idx = self.log.len();
        match self.live.get(&key) {
            Some(&prev) if self.log[prev].timestamp > record.timestamp => {}
            _ => {
                self.live.insert(key, idx);
            }
        }
        self.log.push(record);
    }
}

/// Reads a JSON-lines record log without opening it for writing.
pub fn read_records(path: &Path) -> Result<Vec<AnnotationRecord>, StoreError> {
    let io = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Writes records as JSON lines, the format [`AnnotationStore::open`] replays.
pub fn write_records<W: Write>(records: &[AnnotationRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Thread-safe record store backed by an append-only JSON-lines file.
///
/// Every submission is appended; the live view keeps the latest record per
/// (tweet, annotator).
pub struct AnnotationStore {
    state: RwLock<State>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl AnnotationStore {
    pub fn in_memory() -> Self {
        AnnotationStore {
            state: RwLock::new(State::default()),
            file: None,
        }
    }

    /// Opens (creating if needed) a JSON-lines store and replays it.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let mut state = State::default();
        if path.exists() {
            for record in read_records(path)? {
                state.apply(record);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| StoreError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(AnnotationStore {
            state: RwLock::new(state),
            file: Some((path.to_path_buf(), Mutex::new(file))),
        })
    }

    /// Records a label, assigning the next timestamp.
    pub fn submit(&self, tweet_id: &str, annotator_id: &str, label: Label) -> Result<AnnotationRecord, StoreError> {
        let mut state = self.state.write().expect("store lock poisoned");
        let record = AnnotationRecord::new(tweet_id, annotator_id, label, state.next_timestamp);
        if let Some((path, file)) = &self.file {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            let mut f = file.lock().expect("file lock poisoned");
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|source| StoreError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        state.apply(record.clone());
        Ok(record)
    }

    /// Inserts a record with a caller-chosen timestamp (imports, fixtures).
    pub fn insert(&self, record: AnnotationRecord) {
        self.state.write().expect("store lock poisoned").apply(record);
    }

    /// Consistent copy of the live records, sorted by timestamp.
    pub fn snapshot(&self) -> Vec<AnnotationRecord> {
        let state = self.state.read().expect("store lock poisoned");
        let mut out: Vec<AnnotationRecord> = state.live.values().map(|&i| state.log[i].clone()).collect();
        out.sort_by_key(|r| r.timestamp);
        out
    }

    /// Every record ever submitted, superseded ones included.
    pub fn log(&self) -> Vec<AnnotationRecord> {
        self.state.read().expect("store lock poisoned").log.clone()
    }

    pub fn has_labeled(&self, tweet_id: &str, annotator_id: &str) -> bool {
        let state = self.state.read().expect("store lock poisoned");
        state
            .live
            .contains_key(&(tweet_id.to_string(), annotator_id.to_string()))
    }
}
