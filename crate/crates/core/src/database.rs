//! The chunk database: every chunk of the four levels plus the vanilla
//! baseline population, their vectors, and exhaustive similarity scoring.

use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::corpus::Document;
use crate::embed::{dot, normalize, Embedder, VectorStore};
use crate::segmenter::{segment_document, segment_vanilla, Chunk, ChunkLevel, SegmenterConfig};
use crate::sentence::SentenceSplitter;
use crate::summarizer::SummaryRecord;

/// Which chunks a retrieval scores against.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkPool {
    /// Chunks of the given abstraction levels, pooled together.
    Levels(BTreeSet<ChunkLevel>),
    /// Fixed-size baseline chunks that ignore document structure.
    Vanilla,
}

impl ChunkPool {
    pub fn all_levels() -> Self {
        ChunkPool::Levels(ChunkLevel::ALL.into_iter().collect())
    }

    pub fn level(level: ChunkLevel) -> Self {
        ChunkPool::Levels([level].into_iter().collect())
    }

    pub fn label(&self) -> String {
        match self {
            ChunkPool::Vanilla => "vanilla".into(),
            ChunkPool::Levels(l) if l.len() == 4 => "all".into(),
            ChunkPool::Levels(l) => l.iter().rev().map(|l| l.as_str()).collect::<Vec<_>>().join(","),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DbError {
    #[error("duplicate chunk id {0}")]
    DuplicateChunkId(String),
    #[error("placeholder {0} has not been filled")]
    UnfilledPlaceholder(String),
    #[error("{missing} chunks have no vector")]
    MissingVectors { missing: usize },
    #[error("database is finalized")]
    Finalized,
    #[error("database is not finalized")]
    NotFinalized,
    #[error("embedding batch starting at chunk {chunk_id} failed: {source}")]
    Backend {
        chunk_id: String,
        #[source]
        source: BackendError,
    },
    #[error("embedding for {chunk_id} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        chunk_id: String,
        expected: usize,
        got: usize,
    },
    #[error("backend returned {got} vectors for a batch of {expected}")]
    BatchSizeMismatch { expected: usize, got: usize },
    #[error("zero vector for {0}; nothing embeddable in the text")]
    ZeroVector(String),
    #[error("query embedder {got} does not match the database embedder {expected}")]
    EmbedderMismatch { expected: String, got: String },
    #[error("empty level set")]
    EmptyLevels,
    #[error("stored vectors do not line up with chunks: {0}")]
    VectorLayout(String),
}

/// Per-level count and average length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: ChunkLevel,
    pub count: usize,
    pub total_words: usize,
    pub avg_words: usize,
}

pub fn rounded_average(total: usize, count: usize) -> usize {
    if count == 0 {
        0
    } else {
        (total as f64 / count as f64).round() as usize
    }
}

/// A chunk together with its similarity to the query.
#[derive(Debug, Clone, Copy)]
pub struct ScoredChunk<'a> {
    pub chunk: &'a Chunk,
    pub similarity: f64,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct EmbedProgress {
    pub backend_calls: usize,
    pub embedded: usize,
}

#[derive(Debug, Clone)]
pub struct ChunkDatabase {
    chunks: Vec<Chunk>,
    baseline: Vec<Chunk>,
    summaries: Vec<SummaryRecord>,
    vectors: Option<VectorStore>,
    finalized: bool,
}

impl ChunkDatabase {
    /// Builds a database from chunk populations. Ids must be unique across both.
    pub fn new(chunks: Vec<Chunk>, baseline: Vec<Chunk>) -> Result<Self, DbError> {
        let mut seen = HashSet::new();
        for c in chunks.iter().chain(&baseline) {
            if !seen.insert(c.chunk_id.as_str()) {
                return Err(DbError::DuplicateChunkId(c.chunk_id.clone()));
            }
        }
        Ok(ChunkDatabase {
            chunks,
            baseline,
            summaries: Vec::new(),
            vectors: None,
            finalized: false,
        })
    }

    /// Segments every document into the four levels and the vanilla baseline.
    pub fn from_documents(
        documents: &[Document],
        cfg: &SegmenterConfig,
        splitter: &SentenceSplitter,
    ) -> Result<Self, DbError> {
        let per_doc: Vec<(Vec<Chunk>, Vec<Chunk>)> = documents
            .par_iter()
            .map(|d| (segment_document(d, cfg, splitter), segment_vanilla(d, cfg, splitter)))
            .collect();
        let (mut chunks, mut baseline) = (Vec::new(), Vec::new());
        for (c, b) in per_doc {
            chunks.extend(c);
            baseline.extend(b);
        }
        Self::new(chunks, baseline)
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn baseline(&self) -> &[Chunk] {
        &self.baseline
    }

    /// Chunks of the four levels followed by the baseline chunks; the order vectors are stored in.
    pub fn records(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.iter().chain(&self.baseline)
    }

    pub fn record_count(&self) -> usize {
        self.chunks.len() + self.baseline.len()
    }

    pub fn chunks_mut(&mut self) -> Result<&mut Vec<Chunk>, DbError> {
        if self.finalized {
            return Err(DbError::Finalized);
        }
        Ok(&mut self.chunks)
    }

    pub fn get(&self, chunk_id: &str) -> Option<&Chunk> {
        self.records().find(|c| c.chunk_id == chunk_id)
    }

    pub fn summaries(&self) -> &[SummaryRecord] {
        &self.summaries
    }

    pub fn add_summaries(&mut self, records: impl IntoIterator<Item = SummaryRecord>) {
        self.summaries.extend(records);
    }

    pub fn vectors(&self) -> Option<&VectorStore> {
        self.vectors.as_ref()
    }

    /// Installs previously stored vectors; ids must match the record order.
    pub fn set_vectors(&mut self, store: VectorStore) -> Result<(), DbError> {
        if store.len() > self.record_count() {
            return Err(DbError::VectorLayout(format!(
                "{} vectors for {} chunks",
                store.len(),
                self.record_count()
            )));
        }
        for (id, chunk) in store.ids().iter().zip(self.records()) {
            if id != &chunk.chunk_id {
                return Err(DbError::VectorLayout(format!("expected {}, found {id}", chunk.chunk_id)));
            }
        }
        self.vectors = Some(store);
        Ok(())
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn first_unfilled(&self) -> Option<&Chunk> {
        self.chunks.iter().find(|c| c.is_unfilled())
    }

    /// Embeds every chunk that has no vector yet, in record order and in
    /// batches of `batch_size`. Completed batches are kept when a later batch
    /// fails, so calling again resumes where it stopped.
    pub fn embed_all(&mut self, backend: &dyn Embedder, batch_size: usize) -> Result<EmbedProgress, DbError> {
        if self.finalized {
            return Err(DbError::Finalized);
        }
        if let Some(c) = self.first_unfilled() {
            return Err(DbError::UnfilledPlaceholder(c.chunk_id.clone()));
        }
        let dimension = backend.dimension();
        let reuse = self
            .vectors
            .as_ref()
            .is_some_and(|v| v.backend_id == backend.backend_id() && v.dimension == dimension);
        if !reuse {
            self.vectors = Some(VectorStore::new(backend.backend_id(), dimension));
        }
        let store = self.vectors.as_mut().expect("vector store initialized");
        let pending: Vec<&Chunk> = self.chunks.iter().chain(&self.baseline).skip(store.len()).collect();

        let mut progress = EmbedProgress::default();
        for batch in pending.chunks(batch_size.max(1)) {
            let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
            progress.backend_calls += 1;
            let vectors = backend.embed(&texts).map_err(|source| DbError::Backend {
                chunk_id: batch[0].chunk_id.clone(),
                source,
            })?;
            if vectors.len() != batch.len() {
                return Err(DbError::BatchSizeMismatch {
                    expected: batch.len(),
                    got: vectors.len(),
                });
            }
            let mut normalized = Vec::with_capacity(batch.len());
            for (chunk, v) in batch.iter().zip(&vectors) {
                if v.len() != dimension {
                    return Err(DbError::DimensionMismatch {
                        chunk_id: chunk.chunk_id.clone(),
                        expected: dimension,
                        got: v.len(),
                    });
                }
                normalized.push(normalize(v).ok_or_else(|| DbError::ZeroVector(chunk.chunk_id.clone()))?);
            }
            for (chunk, v) in batch.iter().zip(normalized) {
                store.push(chunk.chunk_id.clone(), &v);
            }
            progress.embedded += batch.len();
        }
        Ok(progress)
    }

    /// Seals the database. Fails on any unfilled placeholder or missing vector.
    pub fn finalize(&mut self) -> Result<(), DbError> {
        if let Some(c) = self.first_unfilled() {
            return Err(DbError::UnfilledPlaceholder(c.chunk_id.clone()));
        }
        let have = self.vectors.as_ref().map_or(0, VectorStore::len);
        if have != self.record_count() {
            return Err(DbError::MissingVectors {
                missing: self.record_count() - have,
            });
        }
        self.finalized = true;
        Ok(())
    }

    pub fn level_stats(&self) -> [LevelStats; 4] {
        ChunkLevel::ALL.map(|level| {
            let (count, total_words) = self
                .chunks
                .iter()
                .filter(|c| c.level == level)
                .fold((0, 0), |(n, w), c| (n + 1, w + c.words));
            LevelStats {
                level,
                count,
                total_words,
                avg_words: rounded_average(total_words, count),
            }
        })
    }

    /// Embeds `query` and normalizes it. The embedder must be the one the
    /// database was built with.
    pub fn embed_query(&self, query: &str, embedder: &dyn Embedder) -> Result<Vec<f32>, DbError> {
        let store = self.vectors.as_ref().ok_or(DbError::NotFinalized)?;
        if store.backend_id != embedder.backend_id() || store.dimension != embedder.dimension() {
            return Err(DbError::EmbedderMismatch {
                expected: format!("{} (d={})", store.backend_id, store.dimension),
                got: format!("{} (d={})", embedder.backend_id(), embedder.dimension()),
            });
        }
        let mut vectors = embedder
            .embed(&[query.to_string()])
            .map_err(|source| DbError::Backend {
                chunk_id: "<query>".into(),
                source,
            })?;
        let v = vectors.pop().ok_or(DbError::BatchSizeMismatch { expected: 1, got: 0 })?;
        if v.len() != store.dimension {
            return Err(DbError::DimensionMismatch {
                chunk_id: "<query>".into(),
                expected: store.dimension,
                got: v.len(),
            });
        }
        normalize(&v).ok_or_else(|| DbError::ZeroVector("<query>".into()))
    }

    /// Scores every chunk in `pool` against a unit query vector. Sorted by
    /// descending similarity, ties by ascending chunk id.
    pub fn score_vector(&self, query: &[f32], pool: &ChunkPool) -> Result<Vec<ScoredChunk<'_>>, DbError> {
        if !self.finalized {
            return Err(DbError::NotFinalized);
        }
        let store = self.vectors.as_ref().ok_or(DbError::NotFinalized)?;
        let offset = self.chunks.len();
        let mut scored: Vec<ScoredChunk<'_>> = match pool {
            ChunkPool::Levels(levels) => {
                if levels.is_empty() {
                    return Err(DbError::EmptyLevels);
                }
                self.chunks
                    .par_iter()
                    .enumerate()
                    .filter(|(_, c)| levels.contains(&c.level))
                    .map(|(i, chunk)| ScoredChunk {
                        chunk,
                        similarity: dot(query, store.vector(i)),
                    })
                    .collect()
            }
            ChunkPool::Vanilla => self
                .baseline
                .par_iter()
                .enumerate()
                .map(|(i, chunk)| ScoredChunk {
                    chunk,
                    similarity: dot(query, store.vector(offset + i)),
                })
                .collect(),
        };
        scored.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| a.chunk.chunk_id.cmp(&b.chunk.chunk_id))
        });
        Ok(scored)
    }

    pub fn score_all(&self, query: &str, embedder: &dyn Embedder, pool: &ChunkPool) -> Result<Vec<ScoredChunk<'_>>, DbError> {
        if !self.finalized {
            return Err(DbError::NotFinalized);
        }
        let q = self.embed_query(query, embedder)?;
        self.score_vector(&q, pool)
    }
}
