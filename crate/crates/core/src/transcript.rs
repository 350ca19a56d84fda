//! JSONL transcript rows: the on-disk form of a [`TurnRecord`].

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{EmbeddingError, EmbeddingProvider};
use crate::schema::TaskSchema;
use crate::state::{Target, TurnRecord};

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("turn {turn}: unknown category `{name}`")]
    UnknownCategory { turn: usize, name: String },
    #[error("turn {turn}: {source}")]
    Embedding {
        turn: usize,
        #[source]
        source: EmbeddingError,
    },
    #[error("cannot read transcript `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRow {
    pub turn: usize,
    pub strategy: String,
    pub target_category: String,
    #[serde(default)]
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub gains: BTreeMap<String, f64>,
    /// Key into a file-backed embedding store. Synthetic providers embed the
    /// answer text instead.
    #[serde(default)]
    pub embedding_key: String,
}

impl TranscriptRow {
    pub fn target(&self, schema: &TaskSchema) -> Result<Target, TranscriptError> {
        if self.target_category == crate::GENERAL {
            return Ok(Target::General);
        }
        schema
            .index_of(&self.target_category)
            .map(Target::Category)
            .ok_or_else(|| TranscriptError::UnknownCategory {
                turn: self.turn,
                name: self.target_category.clone(),
            })
    }

    pub fn to_record(&self, schema: &TaskSchema, provider: &EmbeddingProvider) -> Result<TurnRecord, TranscriptError> {
        let target = self.target(schema)?;
        let mut gains = Vec::with_capacity(self.gains.len());
        for (name, &g) in &self.gains {
            let idx = schema.index_of(name).ok_or_else(|| TranscriptError::UnknownCategory {
                turn: self.turn,
                name: name.clone(),
            })?;
            gains.push((idx, g));
        }
        let key = match provider {
            EmbeddingProvider::FileBacked(_) => self.embedding_key.as_str(),
            EmbeddingProvider::Synthetic(_) => self.answer.as_str(),
        };
        let embedding = provider.embed(key).map_err(|source| TranscriptError::Embedding {
            turn: self.turn,
            source,
        })?;
        Ok(TurnRecord::new(self.turn, target, self.strategy.clone(), gains, embedding))
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TranscriptRow>, TranscriptError> {
    read_jsonl(text.as_bytes())
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<TranscriptRow>, TranscriptError> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TranscriptError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| TranscriptError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_jsonl_path(path: impl AsRef<Path>) -> Result<Vec<TranscriptRow>, TranscriptError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TranscriptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_jsonl(io::BufReader::new(file))
}

pub fn write_jsonl<W: Write>(mut out: W, rows: &[TranscriptRow]) -> io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_records(
    rows: &[TranscriptRow],
    schema: &TaskSchema,
    provider: &EmbeddingProvider,
) -> Result<Vec<TurnRecord>, TranscriptError> {
    rows.iter().map(|r| r.to_record(schema, provider)).collect()
}
