//! End-to-end commands: index, query, eval and stats.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::answer::{assemble_context, generate_answer, AnswerError, AnswerRecord, PromptTemplate, RetryPolicy};
use crate::config::Backends;
use crate::corpus::{parse_corpus, Document};
use crate::database::ChunkDatabase;
use crate::embed::Embedder;
use crate::evaluator::{aggregate, evaluate_question, AnswerForEval, EvalReport, QaPair};
use crate::retriever::{retrieve, RetrievalResult, RetrieverConfig};
use crate::segmenter::{ChunkLevel, SegmenterConfig};
use crate::sentence::SentenceSplitter;
use crate::store::{BuildKey, ChunkStore, Manifest, StoreError};
use crate::summarizer::{fill_placeholders, Extractor};

/// Pipeline stage, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Store,
    Parse,
    Summarize,
    Embed,
    Retrieve,
    Generate,
    Evaluate,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config | Stage::Store => 1,
            Stage::Parse => 2,
            Stage::Summarize => 3,
            Stage::Embed => 4,
            Stage::Retrieve => 5,
            Stage::Generate => 6,
            Stage::Evaluate => 7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Store => "store",
            Stage::Parse => "parse",
            Stage::Summarize => "summarize",
            Stage::Embed => "embed",
            Stage::Retrieve => "retrieve",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage} failed{}: {message}", doc_id.as_ref().map(|d| format!(" for document {d}")).unwrap_or_default())]
pub struct PipelineError {
    pub stage: Stage,
    pub doc_id: Option<String>,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            doc_id: None,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

fn store_err(e: StoreError) -> PipelineError {
    PipelineError::new(Stage::Store, e)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct ConfigFingerprint<'a> {
    segmenter: &'a SegmenterConfig,
    abbreviations: Vec<String>,
    extractor: &'a str,
    embedder: &'a str,
    dimension: usize,
}

/// Hash of every setting that influences the store contents.
pub fn config_hash(
    segmenter: &SegmenterConfig,
    splitter: &SentenceSplitter,
    extractor: &dyn Extractor,
    embedder: &dyn Embedder,
) -> String {
    let fp = ConfigFingerprint {
        segmenter,
        abbreviations: splitter.abbreviations().entries(),
        extractor: extractor.backend_id(),
        embedder: embedder.backend_id(),
        dimension: embedder.dimension(),
    };
    sha256_hex(&serde_json::to_vec(&fp).expect("serializable"))
}

pub struct IndexOptions<'a> {
    pub corpus: &'a Path,
    pub store: &'a Path,
    pub segmenter: SegmenterConfig,
    pub splitter: &'a SentenceSplitter,
    pub parallelism: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexStatus {
    Built,
    Resumed,
    AlreadyFinalized,
}

#[derive(Debug, Clone)]
pub struct IndexOutcome {
    pub status: IndexStatus,
    pub manifest: Manifest,
}

/// Parses, segments, summarizes and embeds a corpus into a finalized store.
///
/// Progress is saved after summarization and after each failed embedding
/// run, so re-running after a backend failure continues where it stopped.
pub fn cmd_index(
    opts: &IndexOptions<'_>,
    extractor: &dyn Extractor,
    embedder: &dyn Embedder,
) -> Result<IndexOutcome, PipelineError> {
    let bytes = fs::read(opts.corpus)
        .map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", opts.corpus.display())))?;
    opts.segmenter.validate().map_err(|e| PipelineError::new(Stage::Config, e))?;
    let text = String::from_utf8(bytes).map_err(|e| PipelineError::new(Stage::Parse, e))?;
    let documents = parse_corpus(&text).map_err(|e| PipelineError::new(Stage::Parse, e))?;
    if documents.is_empty() {
        return Err(PipelineError::new(Stage::Parse, "corpus contains no documents"));
    }

    let key = BuildKey {
        corpus_hash: sha256_hex(text.as_bytes()),
        config_hash: config_hash(&opts.segmenter, opts.splitter, extractor, embedder),
    };
    let store = ChunkStore::new(opts.store);
    if store.is_finalized() {
        let manifest = store.manifest().map_err(store_err)?;
        if manifest.key() != key {
            return Err(store_err(StoreError::Mismatch(opts.store.to_path_buf())));
        }
        return Ok(IndexOutcome {
            status: IndexStatus::AlreadyFinalized,
            manifest,
        });
    }

    let resumed = match store.progress().map_err(store_err)? {
        Some(k) if k == key => store.load_partial().map_err(store_err)?,
        Some(_) => return Err(store_err(StoreError::Mismatch(opts.store.to_path_buf()))),
        None => None,
    };
    let status = if resumed.is_some() {
        IndexStatus::Resumed
    } else {
        IndexStatus::Built
    };
    let mut db = match resumed {
        Some(db) => db,
        None => {
            store.begin(&key).map_err(store_err)?;
            ChunkDatabase::from_documents(&documents, &opts.segmenter, opts.splitter)
                .map_err(|e| PipelineError::new(Stage::Parse, e))?
        }
    };

    summarize(&documents, &mut db, extractor, opts.parallelism, &store)?;

    if let Err(e) = db.embed_all(embedder, opts.batch_size) {
        store.save_vectors(&db).map_err(store_err)?;
        return Err(PipelineError::new(Stage::Embed, e));
    }
    store.save_vectors(&db).map_err(store_err)?;
    db.finalize().map_err(|e| PipelineError::new(Stage::Embed, e))?;
    let manifest =
        Manifest::describe(&db, &key, extractor.backend_id()).map_err(|e| PipelineError::new(Stage::Store, e))?;
    store.finalize(&manifest).map_err(store_err)?;
    Ok(IndexOutcome { status, manifest })
}

fn summarize(
    documents: &[Document],
    db: &mut ChunkDatabase,
    extractor: &dyn Extractor,
    parallelism: usize,
    store: &ChunkStore,
) -> Result<(), PipelineError> {
    let chunks = db.chunks_mut().map_err(|e| PipelineError::new(Stage::Summarize, e))?;
    let report = fill_placeholders(documents, chunks, extractor, parallelism);
    db.add_summaries(report.records);
    store.save_records(db).map_err(store_err)?;
    if let Some(first) = report.failed.first() {
        let ids: Vec<&str> = report.failed.iter().map(|f| f.doc_id.as_str()).collect();
        return Err(PipelineError {
            stage: Stage::Summarize,
            doc_id: Some(first.doc_id.clone()),
            message: format!("{} (failed documents: {})", first.error, ids.join(", ")),
        });
    }
    Ok(())
}

pub fn open_store(dir: &Path) -> Result<(Manifest, ChunkDatabase), PipelineError> {
    ChunkStore::new(dir).open().map_err(store_err)
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub retrieval: RetrievalResult,
    pub answer: AnswerRecord,
}

/// Retrieves context for `question` and generates an answer from it.
pub fn cmd_query(
    db: &ChunkDatabase,
    question: &str,
    cfg: &RetrieverConfig,
    embedder: &dyn Embedder,
    chat: &dyn crate::answer::ChatBackend,
    template: &PromptTemplate,
    retry: &RetryPolicy,
) -> Result<QueryOutcome, PipelineError> {
    let retrieval = retrieve(question, db, embedder, cfg).map_err(|e| PipelineError::new(Stage::Retrieve, e))?;
    let chunks: Vec<_> = retrieval
        .selected
        .iter()
        .filter_map(|s| db.get(&s.chunk_id))
        .collect();
    let context = assemble_context(&chunks).map_err(|e| PipelineError::new(Stage::Retrieve, e))?;
    let answer = generate_answer(question, &context, template, chat, retry).map_err(|e| match e {
        AnswerError::Exhausted { .. } => PipelineError::new(Stage::Generate, e),
        e => PipelineError::new(Stage::Generate, e),
    })?;
    Ok(QueryOutcome { retrieval, answer })
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub retriever: RetrieverConfig,
    /// Use the ground truth itself as the retrieved context.
    pub gold_context: bool,
    pub parallelism: usize,
}

/// What happened for one question of an evaluation run.
#[derive(Debug, Clone, Serialize)]
pub struct QuestionTrace {
    pub question_id: String,
    #[serde(skip_serializing_if = "Option::is_none", flatten)]
    pub retrieval: Option<RetrievalResult>,
    pub gold_context: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<AnswerRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub traces: Vec<QuestionTrace>,
    pub warnings: Vec<String>,
}

impl EvalOutcome {
    /// One audit record per question: the retrieval result fields, the
    /// answer record, and any failure.
    pub fn audit_ndjson(&self) -> String {
        self.traces
            .iter()
            .map(|t| serde_json::to_string(t).expect("serializable") + "\n")
            .collect()
    }
}

/// Retrieves, answers and scores every question. Per-question failures are
/// recorded in the report and the run continues.
pub fn cmd_eval(
    db: &ChunkDatabase,
    qa_pairs: &[QaPair],
    opts: &EvalOptions,
    backends: &Backends,
    template: &PromptTemplate,
    retry: &RetryPolicy,
) -> EvalOutcome {
    let mut warnings = Vec::new();
    if qa_pairs.is_empty() {
        warnings.push("no questions to evaluate".to_string());
    }
    let run = |qa: &QaPair| eval_one(db, qa, opts, backends, template, retry);
    let results: Vec<_> = match rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
    {
        Ok(pool) => pool.install(|| qa_pairs.par_iter().map(run).collect()),
        Err(_) => qa_pairs.iter().map(run).collect(),
    };
    let (questions, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = aggregate(questions);
    if report.aggregate.excluded > 0 {
        warnings.push(format!("{} questions excluded after judge failures", report.aggregate.excluded));
    }
    EvalOutcome {
        report,
        traces,
        warnings,
    }
}

fn eval_one(
    db: &ChunkDatabase,
    qa: &QaPair,
    opts: &EvalOptions,
    backends: &Backends,
    template: &PromptTemplate,
    retry: &RetryPolicy,
) -> (crate::evaluator::QuestionReport, QuestionTrace) {
    let mut trace = QuestionTrace {
        question_id: qa.question_id.clone(),
        retrieval: None,
        gold_context: opts.gold_context,
        answer: None,
        failed_stage: None,
        error: None,
    };

    let prepared: Result<(String, Vec<String>), PipelineError> = if opts.gold_context {
        Ok((qa.ground_truth.clone(), vec![qa.ground_truth.clone()]))
    } else {
        retrieve(&qa.question, db, backends.embedder.as_ref(), &opts.retriever)
            .map_err(|e| PipelineError::new(Stage::Retrieve, e))
            .and_then(|r| {
                let chunks: Vec<_> = r.selected.iter().filter_map(|s| db.get(&s.chunk_id)).collect();
                let passages = chunks.iter().map(|c| c.text.clone()).collect();
                let context = assemble_context(&chunks);
                trace.retrieval = Some(r);
                context
                    .map(|c| (c, passages))
                    .map_err(|e| PipelineError::new(Stage::Retrieve, e))
            })
    };

    let generated = prepared.and_then(|(context, passages)| {
        match generate_answer(&qa.question, &context, template, backends.chat.as_ref(), retry) {
            Ok(mut record) => {
                record.question_id = Some(qa.question_id.clone());
                record.retrieval_ref = Some(format!("audit:{}", qa.question_id));
                trace.answer = Some(record.clone());
                Ok(AnswerForEval {
                    answer: record.answer,
                    context_passages: passages,
                })
            }
            Err(AnswerError::Exhausted { record, last, .. }) => {
                let mut record = *record;
                record.question_id = Some(qa.question_id.clone());
                trace.answer = Some(record);
                Err(PipelineError::new(Stage::Generate, last))
            }
            Err(e) => Err(PipelineError::new(Stage::Generate, e)),
        }
    });

    let report = match generated {
        Ok(answer) => evaluate_question(qa, Some(&answer), backends.judge.as_ref()),
        Err(e) => {
            trace.failed_stage = Some(e.stage);
            trace.error = Some(e.message.clone());
            let mut r = evaluate_question(qa, None, backends.judge.as_ref());
            r.error = Some(e.to_string());
            r
        }
    };
    if let Some(e) = &report.error {
        if trace.error.is_none() {
            trace.failed_stage = Some(Stage::Evaluate);
            trace.error = Some(e.clone());
        }
    }
    (report, trace)
}

/// Renders the per-level table: a header and exactly four level rows.
pub fn format_stats(manifest: &Manifest) -> String {
    let mut out = format!("{:<16}{:>12}{:>12}\n", "level", "chunks", "avg_words");
    for level in ChunkLevel::ALL {
        let (count, avg) = manifest
            .level(level)
            .map_or((0, 0), |s| (s.count, s.avg_words));
        out.push_str(&format!("{:<16}{:>12}{:>12}\n", level.as_str(), count, avg));
    }
    out
}

/// Checks the structural invariants of the manifest's level table.
pub fn check_stats(manifest: &Manifest) -> Result<(), PipelineError> {
    let count = |l| manifest.level(l).map(|s| s.count);
    let fail = |m: String| Err(PipelineError::new(Stage::Store, format!("invariant violated: {m}")));
    if manifest.levels.len() != 4 || ChunkLevel::ALL.iter().any(|&l| count(l).is_none()) {
        return fail("manifest must have exactly four level rows".into());
    }
    for l in ChunkLevel::ALL {
        if count(l) == Some(0) {
            return fail(format!("no {l} chunks"));
        }
    }
    if count(ChunkLevel::MultiSentence) < count(ChunkLevel::Paragraph) {
        return fail("fewer multi-sentence chunks than paragraphs".into());
    }
    if count(ChunkLevel::Section) < count(ChunkLevel::Document) {
        return fail("fewer sections than documents".into());
    }
    Ok(())
}

/// Loads the manifest of a finalized store and renders its level table.
pub fn cmd_stats(store: &Path) -> Result<String, PipelineError> {
    let manifest = ChunkStore::new(store).manifest().map_err(store_err)?;
    check_stats(&manifest)?;
    Ok(format_stats(&manifest))
}

/// Maps question id to the record, for callers that want lookup by id.
pub fn answers_by_id(traces: &[QuestionTrace]) -> HashMap<&str, &AnswerRecord> {
    traces
        .iter()
        .filter_map(|t| t.answer.as_ref().map(|a| (t.question_id.as_str(), a)))
        .collect()
}
