use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use super::{Category, Document, Payload};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// One JSON object per line with a `text` (or `token_ids`) field and an optional `id`.
    Jsonl,
    /// A directory of plain-text files, one document per file.
    PlainDir,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(InputFormat::Jsonl),
            "plain-dir" | "plain_dir" | "dir" => Ok(InputFormat::PlainDir),
            _ => Err(Error::Config(format!(
                "unknown input format {s:?} (expected jsonl or plain-dir)"
            ))),
        }
    }
}

#[derive(Deserialize)]
struct JsonlRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    token_ids: Option<Vec<u32>>,
}

enum Source {
    Jsonl {
        lines: Lines<BufReader<File>>,
        line_no: usize,
    },
    Dir {
        files: std::vec::IntoIter<(PathBuf, String)>,
    },
}

/// Lazily yields documents from one input. Malformed records are skipped and
/// counted; I/O failures are returned as errors.
pub struct DocumentStream {
    path: PathBuf,
    file_label: String,
    category: Category,
    source: Source,
    record_index: usize,
    seen: HashSet<String>,
    warnings: Vec<String>,
}

/// Opens `path` for ingestion. Fails immediately if the file or directory
/// cannot be read.
pub fn ingest_documents(
    path: impl AsRef<Path>,
    category: Category,
    format: InputFormat,
) -> Result<DocumentStream> {
    let path = path.as_ref().to_path_buf();
    let file_label = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let source = match format {
        InputFormat::Jsonl => {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            Source::Jsonl {
                lines: BufReader::new(file).lines(),
                line_no: 0,
            }
        }
        InputFormat::PlainDir => {
            let mut files = Vec::new();
            for entry in fs::read_dir(&path).map_err(|e| Error::io(&path, e))? {
                let entry = entry.map_err(|e| Error::io(&path, e))?;
                let file_type = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
                if file_type.is_file() {
                    let name = entry.file_name().to_string_lossy().into_owned();
                    files.push((entry.path(), name));
                }
            }
            // Directory iteration order is platform dependent.
            files.sort_by(|a, b| a.1.cmp(&b.1));
            Source::Dir {
                files: files.into_iter(),
            }
        }
    };
    Ok(DocumentStream {
        path,
        file_label,
        category,
        source,
        record_index: 0,
        seen: HashSet::new(),
        warnings: Vec::new(),
    })
}

impl DocumentStream {
    pub fn warning_count(&self) -> usize {
        self.warnings.len()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn warn(&mut self, message: String) {
        log::warn!("{}: {message}", self.path.display());
        self.warnings.push(message);
    }

    fn accept(&mut self, doc_id: String, payload: Payload) -> Option<Document> {
        if !self.seen.insert(doc_id.clone()) {
            self.warn(format!("duplicate doc_id {doc_id:?}, record skipped"));
            return None;
        }
        Some(Document {
            doc_id,
            category: self.category,
            payload,
        })
    }
}

impl Iterator for DocumentStream {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match &mut self.source {
                Source::Jsonl { lines, line_no } => {
                    let line = match lines.next()? {
                        Ok(line) => line,
                        Err(e) => return Some(Err(Error::io(&self.path, e))),
                    };
                    *line_no += 1;
                    let line_no = *line_no;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let index = self.record_index;
                    self.record_index += 1;
                    let record: JsonlRecord = match serde_json::from_str(&line) {
                        Ok(r) => r,
                        Err(e) => {
                            self.warn(format!("line {line_no}: {e}"));
                            continue;
                        }
                    };
                    let payload = match (record.text, record.token_ids) {
                        (Some(text), None) => Payload::Text(text),
                        (None, Some(ids)) => Payload::Tokens(ids),
                        (Some(_), Some(_)) => {
                            self.warn(format!("line {line_no}: both text and token_ids present"));
                            continue;
                        }
                        (None, None) => {
                            self.warn(format!("line {line_no}: missing text field"));
                            continue;
                        }
                    };
                    let doc_id = record
                        .id
                        .unwrap_or_else(|| format!("{}:{index}", self.file_label));
                    if let Some(doc) = self.accept(doc_id, payload) {
                        return Some(Ok(doc));
                    }
                }
                Source::Dir { files } => {
                    let (path, name) = files.next()?;
                    self.record_index += 1;
                    let bytes = match fs::read(&path) {
                        Ok(b) => b,
                        Err(e) => return Some(Err(Error::io(&path, e))),
                    };
                    let text = match String::from_utf8(bytes) {
                        Ok(t) => t,
                        Err(_) => {
                            self.warn(format!("{name}: not valid UTF-8"));
                            continue;
                        }
                    };
                    if let Some(doc) = self.accept(format!("{name}:0"), Payload::Text(text)) {
                        return Some(Ok(doc));
                    }
                }
            }
        }
    }
}
