//! Append-only line-delimited record store.
//!
//! One JSON record per line, UTF-8, human-inspectable and diff-friendly.
//! Appends are serialized through the store handle; readers may load the
//! file concurrently.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at line {line_no} of {path}: {reason}")]
    CorruptRecord {
        path: PathBuf,
        line_no: usize,
        reason: String,
    },
    #[error("record failed to serialize: {0}")]
    Encode(#[from] serde_json::Error),
}

/// What to do with lines that fail to decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptPolicy {
    /// Abort the load with `CorruptRecord`.
    Strict,
    /// Skip the line and report it in the load result.
    Lenient,
}

/// Outcome of a lenient load: the good records plus skipped line numbers.
#[derive(Debug)]
pub struct LoadReport<T> {
    pub records: Vec<T>,
    pub skipped: Vec<(usize, String)>,
}

pub struct JsonlStore<T> {
    path: PathBuf,
    writer: Mutex<Option<File>>,
    _marker: PhantomData<T>,
}

impl<T: Serialize + DeserializeOwned> JsonlStore<T> {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        JsonlStore {
            path: path.into(),
            writer: Mutex::new(None),
            _marker: PhantomData,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io_err(&self, source: std::io::Error) -> StoreError {
        StoreError::Io {
            path: self.path.clone(),
            source,
        }
    }

    /// Appends one record as a single JSON line.
    pub fn append(&self, record: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut guard = self.writer.lock().expect("store writer poisoned");
        if guard.is_none() {
            if let Some(parent) = self.path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| self.io_err(e))?;
                }
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| self.io_err(e))?;
            *guard = Some(file);
        }
        let file = guard.as_mut().expect("writer just initialized");
        file.write_all(line.as_bytes())
            .map_err(|e| self.io_err(e))?;
        file.flush().map_err(|e| self.io_err(e))
    }

    /// Loads all records in append order. A missing file is an empty store.
    pub fn load_all(&self, policy: CorruptPolicy) -> Result<LoadReport<T>, StoreError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Ok(LoadReport {
                    records: Vec::new(),
                    skipped: Vec::new(),
                })
            }
            Err(e) => return Err(self.io_err(e)),
        };
        let reader = BufReader::new(file);
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| self.io_err(e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<T>(&line) {
                Ok(record) => records.push(record),
                Err(e) => match policy {
                    CorruptPolicy::Strict => {
                        return Err(StoreError::CorruptRecord {
                            path: self.path.clone(),
                            line_no,
                            reason: e.to_string(),
                        })
                    }
                    CorruptPolicy::Lenient => skipped.push((line_no, e.to_string())),
                },
            }
        }
        Ok(LoadReport { records, skipped })
    }
}
