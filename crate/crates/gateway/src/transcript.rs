use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::request::ChatRequest;

pub const TRANSCRIPT_FILE: &str = "transcripts.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PersistenceError {
    #[error("transcript io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt transcript at line {line}: {detail}")]
    Corrupt { line: usize, detail: String },
    #[error("failed to serialize transcript entry: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// One recorded chat exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_hash: String,
    pub request: ChatRequest,
    pub response_text: String,
    pub latency_ms: u64,
    pub attempt: u32,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<serde_json::Value>,
}

impl TranscriptEntry {
    /// Builds an entry whose hash is derived from the request.
    pub fn new(request: ChatRequest, response_text: String, latency_ms: u64, attempt: u32) -> Self {
        Self {
            prompt_hash: request.prompt_hash(),
            request,
            response_text,
            latency_ms,
            attempt,
            timestamp: Utc::now(),
            usage: None,
        }
    }

    pub fn hash_is_consistent(&self) -> bool {
        self.prompt_hash == self.request.prompt_hash()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    Strict,
    Lenient,
}

#[derive(Debug, Default)]
pub struct LoadReport {
    pub entries: Vec<TranscriptEntry>,
    /// 1-based line numbers and parse errors of lines dropped in lenient mode.
    pub skipped: Vec<(usize, String)>,
}

/// Append-only JSONL writer. Appends go through a single lock.
#[derive(Debug)]
pub struct TranscriptLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl TranscriptLog {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, PersistenceError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &TranscriptEntry) -> Result<(), PersistenceError> {
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        let mut file = self.file.lock().expect("transcript writer poisoned");
        file.write_all(line.as_bytes())?;
        file.flush()?;
        Ok(())
    }
}

/// Reads a transcript file in order. A missing file is an empty transcript.
pub fn load_transcript_file(path: &Path, mode: LoadMode) -> Result<LoadReport, PersistenceError> {
    let mut report = LoadReport::default();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(report),
        Err(e) => return Err(e.into()),
    };
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TranscriptEntry>(&line) {
            Ok(entry) => report.entries.push(entry),
            Err(e) => match mode {
                LoadMode::Strict => {
                    return Err(PersistenceError::Corrupt { line: line_no, detail: e.to_string() })
                }
                LoadMode::Lenient => {
                    log::warn!("skipping corrupt transcript line {line_no}: {e}");
                    report.skipped.push((line_no, e.to_string()));
                }
            },
        }
    }
    Ok(report)
}

/// Loads `transcripts.jsonl` from a directory.
pub fn load_transcripts(dir: &Path, mode: LoadMode) -> Result<LoadReport, PersistenceError> {
    load_transcript_file(&dir.join(TRANSCRIPT_FILE), mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::request::{Message, ResponseFormat};

    fn entry(i: usize) -> TranscriptEntry {
        let req = ChatRequest {
            model: "m".into(),
            temperature: 0.0,
            messages: vec![Message::user(format!("prompt {i}\nwith \"quotes\""))],
            response_format: ResponseFormat::Text,
            request_tag: format!("tag-{i}"),
            max_tokens: None,
        };
        TranscriptEntry::new(req, format!("answer {i}"), 10, 1)
    }

    #[test]
    fn write_then_load_preserves_order_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let log = TranscriptLog::open(dir.path().join(TRANSCRIPT_FILE)).unwrap();
        for i in 0..5 {
            log.append(&entry(i)).unwrap();
        }
        let loaded = load_transcripts(dir.path(), LoadMode::Strict).unwrap();
        assert_eq!(loaded.entries.len(), 5);
        for (i, e) in loaded.entries.iter().enumerate() {
            assert_eq!(e.response_text, format!("answer {i}"));
            assert!(e.hash_is_consistent());
        }
    }

    #[test]
    fn truncated_final_line_is_named_in_strict_mode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TRANSCRIPT_FILE);
        let log = TranscriptLog::open(&path).unwrap();
        log.append(&entry(0)).unwrap();
        log.append(&entry(1)).unwrap();
        let full = serde_json::to_string(&entry(2)).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&full.as_bytes()[..full.len() / 2]).unwrap();

        match load_transcripts(dir.path(), LoadMode::Strict) {
            Err(PersistenceError::Corrupt { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected corrupt line 3, got {other:?}"),
        }
        let lenient = load_transcripts(dir.path(), LoadMode::Lenient).unwrap();
        assert_eq!(lenient.entries.len(), 2);
        assert_eq!(lenient.skipped[0].0, 3);
    }

    #[test]
    fn missing_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_transcripts(dir.path(), LoadMode::Strict).unwrap().entries.is_empty());
    }
}
