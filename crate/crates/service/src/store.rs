//! Append-only event log, one file per session.
//!
//! Each line is one event with a dense per-session sequence number starting
//! at 1 and a UTC timestamp. Lines are synced to disk before an append
//! returns. A final line that is incomplete or unreadable is a torn write
//! from a crash: readers ignore it and [`EventLog::open`] cuts it off.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use callsense_core::aggregation::CallRecord;
use callsense_core::context::ContextPolicy;
use callsense_core::io::to_canonical_json;
use callsense_core::model::Turn;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::engine::TurnResult;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    SessionOpened {
        backend: String,
        policy: ContextPolicy,
        #[serde(default)]
        metadata: BTreeMap<String, String>,
    },
    TurnAdded {
        turn: Turn,
    },
    /// A later entry for the same turn replaces an earlier one.
    AnnotationAdded {
        result: TurnResult,
    },
    /// Terminal.
    RecordFinalized {
        record: CallRecord,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub session_id: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: unreadable event: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: expected sequence number {expected}, found {found}")]
    SequenceGap { path: PathBuf, line: usize, expected: u64, found: u64 },
    #[error("session log already exists: {0}")]
    Exists(PathBuf),
}

/// Complete events in `bytes` and the byte length they occupy. Only the last
/// line may be torn.
fn decode(path: &Path, bytes: &[u8]) -> Result<(Vec<Event>, usize), StoreError> {
    let mut events = Vec::new();
    let mut offset = 0;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let Some(len) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            break; // torn: no terminating newline
        };
        let line = &bytes[offset..offset + len];
        let next = offset + len + 1;
        let is_last = next >= bytes.len();
        if line.iter().all(u8::is_ascii_whitespace) {
            offset = next;
            continue;
        }
        match serde_json::from_slice::<Event>(line) {
            Ok(event) => {
                let expected = events.len() as u64 + 1;
                if event.seq != expected {
                    return Err(StoreError::SequenceGap {
                        path: path.to_path_buf(),
                        line: line_no,
                        expected,
                        found: event.seq,
                    });
                }
                events.push(event);
            }
            Err(_) if is_last => break,
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
        offset = next;
    }
    Ok((events, offset))
}

/// Reads a log without modifying it.
pub fn read_events(path: &Path) -> Result<Vec<Event>, StoreError> {
    let bytes = std::fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(path, &bytes).map(|(events, _)| events)
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl EventLog {
    /// New empty log; fails if the file exists.
    pub fn create(path: &Path) -> Result<Self, StoreError> {
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)
            .map_err(|source| match source.kind() {
                std::io::ErrorKind::AlreadyExists => StoreError::Exists(path.to_path_buf()),
                _ => StoreError::Io {
                    path: path.to_path_buf(),
                    source,
                },
            })?;
        Ok(EventLog {
            path: path.to_path_buf(),
            file,
            next_seq: 1,
        })
    }

    /// Opens an existing log for appending, dropping a torn tail, and returns
    /// its events.
    pub fn open(path: &Path) -> Result<(Self, Vec<Event>), StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = OpenOptions::new().read(true).write(true).open(path).map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;
        let (events, valid) = decode(path, &bytes)?;
        if valid < bytes.len() {
            tracing::warn!(path = %path.display(), dropped = bytes.len() - valid, "truncating torn log tail");
            file.set_len(valid as u64).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io)?;
        let next_seq = events.len() as u64 + 1;
        Ok((
            EventLog {
                path: path.to_path_buf(),
                file,
                next_seq,
            },
            events,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes and syncs the next event.
    pub fn append(&mut self, session_id: &str, kind: EventKind) -> Result<Event, StoreError> {
        let event = Event {
            seq: self.next_seq,
            at: Utc::now(),
            session_id: session_id.to_string(),
            kind,
        };
        let line = format!("{}\n", to_canonical_json(&event));
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        self.next_seq += 1;
        Ok(event)
    }
}
