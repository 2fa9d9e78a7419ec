//! Fixtures shared by the benchmarks.

use malrag_core::summarizer::fill_placeholders;
use malrag_core::synth::{self, SynthConfig};
use malrag_core::{ChunkDatabase, Document, HashingEmbedder, MockExtractor, SegmenterConfig, SentenceSplitter};

pub fn corpus(documents: usize) -> Vec<Document> {
    synth::generate(
        0xbe7c,
        &SynthConfig {
            documents,
            ..SynthConfig::default()
        },
    )
}

/// Segments, summarizes and embeds `docs` with the offline backends.
pub fn indexed(docs: &[Document]) -> ChunkDatabase {
    let mut db = ChunkDatabase::from_documents(docs, &SegmenterConfig::default(), &SentenceSplitter::default())
        .expect("synthetic ids are unique");
    fill_placeholders(docs, db.chunks_mut().expect("fresh database"), &MockExtractor::default(), 4);
    db.embed_all(&HashingEmbedder::default(), 256).expect("hashing embedder cannot fail");
    db.finalize().expect("all records embedded");
    db
}
