//! Regenerates `fixtures/fixture_embeddings.json` from the fixture corpus and
//! scenario transcripts using the synthetic embedder.
//!
//! A store exported from a sentence-embedding model can replace the file as
//! long as it covers the same keys.

use std::path::Path;

use dt_core::corpus::Corpus;
use dt_core::embeddings::{EmbeddingProvider, EmbeddingStore, SyntheticEmbedder};
use dt_core::transcript;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let embedder = SyntheticEmbedder::default();
    let mut store = EmbeddingStore::new(embedder.dimension())?;

    let text = std::fs::read_to_string(dir.join("sar_corpus.json"))?;
    let mut doc = Corpus::parse_document(&text)?;
    doc.embedding_store = None;
    let corpus = Corpus::from_document(doc, EmbeddingProvider::Synthetic(embedder))?;
    for ladder in &corpus.document().ladders {
        for r in &ladder.rungs {
            store.insert(r.key(), embedder.embed(&r.text)?)?;
        }
    }
    for name in ["scenario1.jsonl", "scenario2.jsonl"] {
        for row in transcript::read_jsonl_path(dir.join(name))? {
            store.insert(row.embedding_key.clone(), embedder.embed(&row.answer)?)?;
        }
    }
    let out = dir.join("fixture_embeddings.json");
    std::fs::write(&out, store.to_json_string())?;
    println!("wrote {} vectors to {}", store.len(), out.display());
    Ok(())
}
