//! Multi-abstraction-level retrieval-augmented generation.
//!
//! Documents are cut into chunks at four levels — whole-document and
//! per-section summaries, original paragraphs, and multi-sentence spans —
//! embedded into one pool, and retrieved jointly under a word budget and a
//! cumulative-probability cutoff.

pub mod answer;
pub mod backend;
pub mod config;
pub mod corpus;
pub mod database;
pub mod embed;
pub mod evaluator;
pub mod pipeline;
pub mod retriever;
pub mod segmenter;
pub mod sentence;
pub mod store;
pub mod summarizer;
pub mod synth;

pub use answer::{
    assemble_context, generate_answer, AnswerError, AnswerRecord, ChatBackend, EchoBackend, EchoMode, PromptTemplate,
    RetryPolicy, ScriptEntry, ScriptedBackend,
};
pub use backend::BackendError;
pub use config::{Backends, ConfigError, PipelineConfig, Preset};
pub use corpus::{parse_corpus, word_count, CorpusError, Document, Paragraph, Section};
pub use database::{ChunkDatabase, ChunkPool, DbError, LevelStats, ScoredChunk};
pub use embed::{cosine_similarity, Embedder, HashingEmbedder, VectorStore};
pub use evaluator::{
    context_recall, count_matches, f1_score, EvalReport, ExactJudge, QaPair, QuestionReport, StatementJudge,
};
pub use pipeline::{PipelineError, Stage};
pub use retriever::{retrieve, Packing, RetrievalResult, RetrieveError, RetrieverConfig};
pub use segmenter::{Chunk, ChunkLevel, Provenance, SegmenterConfig};
pub use sentence::{split_sentences, AbbreviationList, SentenceSplitter};
pub use store::{ChunkStore, Manifest, StoreError};
pub use summarizer::{Extractor, MockExtractor, SummarizeError};
