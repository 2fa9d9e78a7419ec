//! Map-reduce summarization that fills section and document placeholders.
//!
//! A section summary is the extractor's aggregate over the per-paragraph
//! summaries of that section. A document summary is the extractor's aggregate
//! over its section summaries; raw paragraphs never feed it directly.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{fill_input, BackendError, HttpClient};
use crate::corpus::{normalize_whitespace, Document};
use crate::segmenter::{chunk_id_for, Chunk, ChunkLevel, Provenance};
use crate::sentence::split_sentences;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ParagraphSummary,
    SectionAggregate,
    DocumentAggregate,
}

/// The key-information extractor.
pub trait Extractor: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Whether equal inputs always produce equal outputs.
    fn is_deterministic(&self) -> bool {
        false
    }

    fn extract(&self, task: TaskKind, inputs: &[String]) -> Result<String, BackendError>;
}

/// Deterministic extractive stand-in for a summarization model.
///
/// Paragraph summaries are the first sentence of each input. Aggregates are
/// the inputs concatenated in order. Every output is truncated to
/// `max_words` words.
#[derive(Debug, Clone)]
pub struct MockExtractor {
    pub max_words: usize,
}

impl Default for MockExtractor {
    fn default() -> Self {
        MockExtractor { max_words: 60 }
    }
}

impl MockExtractor {
    pub const BACKEND_ID: &'static str = "mock-extractive-v1";
}

impl Extractor for MockExtractor {
    fn backend_id(&self) -> &str {
        Self::BACKEND_ID
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn extract(&self, task: TaskKind, inputs: &[String]) -> Result<String, BackendError> {
        let parts: Vec<String> = match task {
            TaskKind::ParagraphSummary => inputs
                .iter()
                .filter_map(|t| split_sentences(t).into_iter().next())
                .collect(),
            TaskKind::SectionAggregate | TaskKind::DocumentAggregate => {
                inputs.iter().map(|t| normalize_whitespace(t)).collect()
            }
        };
        let joined = parts.join(" ");
        let out = joined
            .split_whitespace()
            .take(self.max_words)
            .collect::<Vec<_>>()
            .join(" ");
        if out.is_empty() {
            return Err(BackendError::EmptyOutput);
        }
        Ok(out)
    }
}

/// Prompt templates for the three extraction tasks. Each contains `{input}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryPrompts {
    pub paragraph: String,
    pub section: String,
    pub document: String,
}

impl Default for SummaryPrompts {
    fn default() -> Self {
        SummaryPrompts {
            paragraph: "Extract the key information from the following paragraph of a scientific article. \
                        Reply with a concise summary only.\n\n{input}"
                .into(),
            section: "The following are key-information summaries of consecutive paragraphs from one section \
                      of a scientific article. Combine them into a single concise summary of the section.\n\n{input}"
                .into(),
            document: "The following are summaries of the sections of a scientific article, in order. \
                       Combine them into a single concise summary of the whole article.\n\n{input}"
                .into(),
        }
    }
}

impl SummaryPrompts {
    /// Loads `paragraph.txt`, `section.txt` and `document.txt` from `dir`,
    /// falling back to the default for any file that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self, String> {
        let mut prompts = SummaryPrompts::default();
        for (name, slot) in [
            ("paragraph.txt", &mut prompts.paragraph),
            ("section.txt", &mut prompts.section),
            ("document.txt", &mut prompts.document),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            }
        }
        prompts.validate()?;
        Ok(prompts)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, t) in [
            ("paragraph", &self.paragraph),
            ("section", &self.section),
            ("document", &self.document),
        ] {
            if !t.contains("{input}") {
                return Err(format!("{name} prompt template has no {{input}} placeholder"));
            }
        }
        Ok(())
    }

    pub fn for_task(&self, task: TaskKind) -> &str {
        match task {
            TaskKind::ParagraphSummary => &self.paragraph,
            TaskKind::SectionAggregate => &self.section,
            TaskKind::DocumentAggregate => &self.document,
        }
    }
}

/// Extractor backed by a chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct HttpExtractor {
    client: HttpClient,
    prompts: SummaryPrompts,
    backend_id: String,
}

impl HttpExtractor {
    pub fn new(client: HttpClient, prompts: SummaryPrompts) -> Self {
        let backend_id = format!("http-chat:{}", client.settings().model);
        HttpExtractor {
            client,
            prompts,
            backend_id,
        }
    }
}

impl Extractor for HttpExtractor {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn extract(&self, task: TaskKind, inputs: &[String]) -> Result<String, BackendError> {
        let prompt = fill_input(self.prompts.for_task(task), &inputs.join("\n\n"));
        self.client.chat(&prompt)
    }
}

/// Audit entry for one filled summary chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub chunk_id: String,
    pub backend_id: String,
    pub input_chunk_ids: Vec<String>,
    pub prompt_kind: TaskKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SummarizeError {
    #[error("nothing to summarize")]
    EmptyInput,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("extraction for {chunk_id} failed: {source}")]
    Backend {
        chunk_id: String,
        #[source]
        source: BackendError,
    },
}

fn backend_err(chunk_id: &str) -> impl Fn(BackendError) -> SummarizeError + '_ {
    move |source| SummarizeError::Backend {
        chunk_id: chunk_id.to_string(),
        source,
    }
}

/// Section summary from its paragraph chunks, given in paragraph order.
pub fn summarize_section(paragraphs: &[&Chunk], backend: &dyn Extractor) -> Result<String, SummarizeError> {
    let first = paragraphs.first().ok_or(SummarizeError::EmptyInput)?;
    let doc_id = &first.provenance.doc_id;
    let section = first.provenance.section_index;
    let mut last_index = None;
    for c in paragraphs {
        if c.level != ChunkLevel::Paragraph {
            return Err(SummarizeError::InvalidInput(format!("{} is not a paragraph chunk", c.chunk_id)));
        }
        if &c.provenance.doc_id != doc_id || c.provenance.section_index != section {
            return Err(SummarizeError::InvalidInput(format!("{} belongs to another section", c.chunk_id)));
        }
        let idx = c.provenance.paragraph_range.map(|[a, _]| a);
        if last_index.is_some() && idx <= last_index {
            return Err(SummarizeError::InvalidInput(format!("{} is out of paragraph order", c.chunk_id)));
        }
        last_index = idx;
    }

    let mapped = paragraphs
        .iter()
        .map(|c| {
            backend
                .extract(TaskKind::ParagraphSummary, std::slice::from_ref(&c.text))
                .map_err(backend_err(&c.chunk_id))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let section_id = chunk_id_for(
        ChunkLevel::Section,
        &Provenance {
            doc_id: doc_id.clone(),
            section_index: section,
            paragraph_range: None,
            sentence_range: None,
        },
    );
    backend
        .extract(TaskKind::SectionAggregate, &mapped)
        .map_err(backend_err(&section_id))
}

/// Document summary from its section summaries, in section order.
pub fn summarize_document(section_summaries: &[String], backend: &dyn Extractor) -> Result<String, SummarizeError> {
    if section_summaries.is_empty() {
        return Err(SummarizeError::EmptyInput);
    }
    backend
        .extract(TaskKind::DocumentAggregate, section_summaries)
        .map_err(backend_err("<document>"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailedDocument {
    pub doc_id: String,
    pub error: SummarizeError,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct FillReport {
    pub records: Vec<SummaryRecord>,
    pub failed: Vec<FailedDocument>,
    /// Documents whose placeholders were already filled.
    pub skipped: usize,
}

struct DocSummaries {
    filled: Vec<(String, String)>,
    records: Vec<SummaryRecord>,
}

/// Fills every unfilled section and document placeholder in `chunks`.
///
/// Documents are processed independently on up to `parallelism` threads; a
/// backend failure aborts only the document it occurred in. Documents whose
/// placeholders are already filled are skipped, which makes the operation
/// resumable.
pub fn fill_placeholders(
    documents: &[Document],
    chunks: &mut [Chunk],
    backend: &dyn Extractor,
    parallelism: usize,
) -> FillReport {
    let position: HashMap<&str, usize> = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| (c.chunk_id.as_str(), i))
        .collect();

    let todo: Vec<&Document> = documents
        .iter()
        .filter(|d| {
            let id = doc_chunk_id(&d.doc_id);
            position.get(id.as_str()).is_some_and(|&i| chunks[i].is_unfilled())
                || d.sections.iter().any(|s| {
                    let id = section_chunk_id(&d.doc_id, s.section_index);
                    position.get(id.as_str()).is_some_and(|&i| chunks[i].is_unfilled())
                })
        })
        .collect();
    let skipped = documents.len() - todo.len();

    let chunks_ro: &[Chunk] = chunks;
    let run = |doc: &Document| summarize_one(doc, chunks_ro, &position, backend);
    let results: Vec<Result<DocSummaries, SummarizeError>> = match rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
    {
        Ok(pool) => pool.install(|| todo.par_iter().map(|d| run(d)).collect()),
        Err(_) => todo.iter().map(|d| run(d)).collect(),
    };

    let mut report = FillReport {
        skipped,
        ..FillReport::default()
    };
    let mut updates = Vec::new();
    for (doc, result) in todo.iter().zip(results) {
        match result {
            Ok(s) => {
                updates.extend(s.filled.into_iter().map(|(id, text)| (position[id.as_str()], text)));
                report.records.extend(s.records);
            }
            Err(error) => report.failed.push(FailedDocument {
                doc_id: doc.doc_id.clone(),
                error,
            }),
        }
    }
    drop(position);
    for (i, text) in updates {
        chunks[i].set_text(text);
    }
    report
}

fn doc_chunk_id(doc_id: &str) -> String {
    chunk_id_for(
        ChunkLevel::Document,
        &Provenance {
            doc_id: doc_id.to_string(),
            section_index: None,
            paragraph_range: None,
            sentence_range: None,
        },
    )
}

fn section_chunk_id(doc_id: &str, section_index: usize) -> String {
    chunk_id_for(
        ChunkLevel::Section,
        &Provenance {
            doc_id: doc_id.to_string(),
            section_index: Some(section_index),
            paragraph_range: None,
            sentence_range: None,
        },
    )
}

fn summarize_one(
    doc: &Document,
    chunks: &[Chunk],
    position: &HashMap<&str, usize>,
    backend: &dyn Extractor,
) -> Result<DocSummaries, SummarizeError> {
    let lookup = |id: &str| {
        position
            .get(id)
            .map(|&i| &chunks[i])
            .ok_or_else(|| SummarizeError::InvalidInput(format!("chunk {id} is missing")))
    };
    let mut out = DocSummaries {
        filled: Vec::new(),
        records: Vec::new(),
    };
    let mut section_ids = Vec::new();
    let mut section_texts = Vec::new();
    for section in &doc.sections {
        let section_id = section_chunk_id(&doc.doc_id, section.section_index);
        lookup(&section_id)?;
        let paragraph_chunks = section
            .paragraphs
            .iter()
            .map(|p| {
                lookup(&chunk_id_for(
                    ChunkLevel::Paragraph,
                    &Provenance {
                        doc_id: doc.doc_id.clone(),
                        section_index: Some(section.section_index),
                        paragraph_range: Some([p.paragraph_index; 2]),
                        sentence_range: None,
                    },
                ))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let text = summarize_section(&paragraph_chunks, backend)?;
        out.records.push(SummaryRecord {
            chunk_id: section_id.clone(),
            backend_id: backend.backend_id().to_string(),
            input_chunk_ids: paragraph_chunks.iter().map(|c| c.chunk_id.clone()).collect(),
            prompt_kind: TaskKind::SectionAggregate,
        });
        out.filled.push((section_id.clone(), text.clone()));
        section_ids.push(section_id);
        section_texts.push(text);
    }

    let doc_id = doc_chunk_id(&doc.doc_id);
    lookup(&doc_id)?;
    let text = summarize_document(&section_texts, backend).map_err(|e| match e {
        SummarizeError::Backend { source, .. } => SummarizeError::Backend {
            chunk_id: doc_id.clone(),
            source,
        },
        e => e,
    })?;
    out.records.push(SummaryRecord {
        chunk_id: doc_id.clone(),
        backend_id: backend.backend_id().to_string(),
        input_chunk_ids: section_ids,
        prompt_kind: TaskKind::DocumentAggregate,
    });
    out.filled.push((doc_id, text));
    Ok(out)
}
