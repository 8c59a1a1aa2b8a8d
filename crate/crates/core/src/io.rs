//! File formats: canonical JSON, config loading and transcript files.
//!
//! Transcripts are accepted either as one conversation object per file or as
//! line-delimited turn records (`conversation_id`, `turn_index`, `speaker`,
//! `text`, optional `start_ms`/`end_ms`/`gold`). Line records may carry a
//! `metadata` map; writers emit it on the first turn of each conversation.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{Conversation, Speaker, Turn, TurnAnnotation};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("cannot read transcript {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Loads a TOML file when the extension is `.toml`, JSON otherwise.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let raw = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed = if path.extension().is_some_and(|ext| ext == "toml") {
        toml::from_str(&raw).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&raw).map_err(|e| e.to_string())
    };
    parsed.map_err(|message| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

/// Serializes with recursively sorted object keys and no insignificant
/// whitespace. Identical values always produce identical bytes.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("domain values serialize to JSON");
    let mut out = String::new();
    write_canonical(&value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (key, val)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_canonical(val, out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// One line of a line-delimited transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRecord {
    pub conversation_id: String,
    pub turn_index: u32,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<TurnAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<BTreeMap<String, String>>,
}

impl TurnRecord {
    pub fn from_turn(conv: &Conversation, turn: &Turn, with_metadata: bool) -> Self {
        TurnRecord {
            conversation_id: conv.conversation_id.clone(),
            turn_index: turn.turn_index,
            speaker: turn.speaker,
            text: turn.text.clone(),
            start_ms: turn.start_ms,
            end_ms: turn.end_ms,
            gold: turn.gold.clone(),
            metadata: (with_metadata && !conv.metadata.is_empty()).then(|| conv.metadata.clone()),
        }
    }

    fn into_turn(self) -> Turn {
        Turn {
            turn_index: self.turn_index,
            speaker: self.speaker,
            text: self.text,
            start_ms: self.start_ms,
            end_ms: self.end_ms,
            gold: self.gold,
        }
    }
}

/// Groups turn records into conversations, in order of first appearance.
/// Turns within a conversation are ordered by `turn_index`.
pub fn group_records(records: impl IntoIterator<Item = TurnRecord>) -> Vec<Conversation> {
    let mut order: Vec<Conversation> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for mut record in records {
        let slot = *by_id.entry(record.conversation_id.clone()).or_insert_with(|| {
            order.push(Conversation::new(record.conversation_id.clone(), Vec::new()));
            order.len() - 1
        });
        if let Some(metadata) = record.metadata.take() {
            order[slot].metadata.extend(metadata);
        }
        order[slot].turns.push(record.into_turn());
    }
    for conv in &mut order {
        conv.turns.sort_by_key(|turn| turn.turn_index);
    }
    order
}

/// Reads a transcript file in either supported layout. A file holding a JSON
/// array of conversations is also accepted.
pub fn read_transcripts(path: &Path) -> Result<Vec<Conversation>, TranscriptError> {
    let raw = fs::read_to_string(path).map_err(|source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_transcripts(&raw).map_err(|(line, message)| TranscriptError::Record {
        path: path.to_path_buf(),
        line,
        message,
    })
}

pub fn parse_transcripts(raw: &str) -> Result<Vec<Conversation>, (usize, String)> {
    let trimmed = raw.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if let Ok(conv) = serde_json::from_str::<Conversation>(raw) {
        return Ok(vec![conv]);
    }
    if trimmed.starts_with('[') {
        return serde_json::from_str::<Vec<Conversation>>(raw).map_err(|e| (e.line(), e.to_string()));
    }
    let mut records = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TurnRecord =
            serde_json::from_str(line).map_err(|e| (i + 1, e.to_string()))?;
        records.push(record);
    }
    Ok(group_records(records))
}

/// Writes conversations as line-delimited turn records in canonical form.
pub fn write_transcripts(path: &Path, corpus: &[Conversation]) -> std::io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_transcript_lines(&mut out, corpus)?;
    out.flush()
}

pub fn write_transcript_lines<W: Write>(out: &mut W, corpus: &[Conversation]) -> std::io::Result<()> {
    for conv in corpus {
        for (i, turn) in conv.turns.iter().enumerate() {
            let record = TurnRecord::from_turn(conv, turn, i == 0);
            writeln!(out, "{}", to_canonical_json(&record))?;
        }
    }
    Ok(())
}

/// Reads a line-delimited file of arbitrary records.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, TranscriptError> {
    let file = fs::File::open(path).map_err(|source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| TranscriptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| TranscriptError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for item in items {
        writeln!(out, "{}", to_canonical_json(item))?;
    }
    out.flush()
}
