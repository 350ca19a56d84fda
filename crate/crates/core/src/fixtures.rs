//! Paths to the bundled search-and-rescue fixtures.

use std::path::PathBuf;

use crate::corpus::{Corpus, CorpusError};
use crate::transcript::{self, TranscriptError, TranscriptRow};

pub fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn corpus_path() -> PathBuf {
    dir().join("sar_corpus.json")
}

pub fn scenario_path(n: u8) -> PathBuf {
    dir().join(format!("scenario{n}.jsonl"))
}

/// The SAR corpus backed by the shipped embedding store.
pub fn sar_corpus() -> Result<Corpus, CorpusError> {
    Corpus::load(corpus_path())
}

pub fn scenario(n: u8) -> Result<Vec<TranscriptRow>, TranscriptError> {
    transcript::read_jsonl_path(scenario_path(n))
}
