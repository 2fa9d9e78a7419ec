//! Splits documents into chunks at four abstraction levels.
//!
//! Paragraph and multi-sentence chunks carry original text. Section and
//! document chunks start as empty placeholders that the summarizer fills.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{word_count, Document, Paragraph};
use crate::sentence::SentenceSplitter;

/// Abstraction level of a chunk. Ordered by abstraction:
/// `MultiSentence < Paragraph < Section < Document`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChunkLevel {
    MultiSentence,
    Paragraph,
    Section,
    Document,
}

impl ChunkLevel {
    /// Highest abstraction first.
    pub const ALL: [ChunkLevel; 4] = [
        ChunkLevel::Document,
        ChunkLevel::Section,
        ChunkLevel::Paragraph,
        ChunkLevel::MultiSentence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChunkLevel::Document => "document",
            ChunkLevel::Section => "section",
            ChunkLevel::Paragraph => "paragraph",
            ChunkLevel::MultiSentence => "multi-sentence",
        }
    }

    pub fn is_summary(self) -> bool {
        matches!(self, ChunkLevel::Document | ChunkLevel::Section)
    }
}

impl fmt::Display for ChunkLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChunkLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "document" => Ok(ChunkLevel::Document),
            "section" => Ok(ChunkLevel::Section),
            "paragraph" => Ok(ChunkLevel::Paragraph),
            "multi" | "multi-sentence" => Ok(ChunkLevel::MultiSentence),
            other => Err(format!("unknown chunk level `{other}`")),
        }
    }
}

/// Where a chunk came from. Ranges are inclusive `[start, end]`.
///
/// For MAL chunks `paragraph_range` indexes paragraphs within the section and
/// `sentence_range` indexes sentences within the paragraph. Vanilla baseline
/// chunks have no section and use document-wide paragraph and sentence ordinals.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraph_range: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_range: Option<[usize; 2]>,
}

impl Provenance {
    /// Checks that exactly the fields appropriate for `level` are present.
    pub fn fits_level(&self, level: ChunkLevel) -> bool {
        let has_section = self.section_index.is_some();
        let single_paragraph = matches!(self.paragraph_range, Some([a, b]) if a == b);
        let has_sentences = matches!(self.sentence_range, Some([a, b]) if a <= b);
        match level {
            ChunkLevel::Document => {
                !has_section && self.paragraph_range.is_none() && self.sentence_range.is_none()
            }
            ChunkLevel::Section => {
                has_section && self.paragraph_range.is_none() && self.sentence_range.is_none()
            }
            ChunkLevel::Paragraph => {
                has_section && single_paragraph && self.sentence_range.is_none()
            }
            ChunkLevel::MultiSentence => has_section && single_paragraph && has_sentences,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub level: ChunkLevel,
    /// Original text, a summary, or empty for an unfilled placeholder.
    pub text: String,
    pub words: usize,
    pub provenance: Provenance,
    pub is_summary: bool,
}

impl Chunk {
    fn new(level: ChunkLevel, text: String, provenance: Provenance) -> Self {
        let chunk_id = chunk_id_for(level, &provenance);
        Chunk {
            chunk_id,
            level,
            words: word_count(&text),
            text,
            provenance,
            is_summary: level.is_summary(),
        }
    }

    pub fn is_unfilled(&self) -> bool {
        self.is_summary && self.text.is_empty()
    }

    /// Replaces the text and recomputes the word count.
    pub fn set_text(&mut self, text: String) {
        self.words = word_count(&text);
        self.text = text;
    }
}

/// Deterministic chunk id derived from level and provenance.
pub fn chunk_id_for(level: ChunkLevel, p: &Provenance) -> String {
    let doc = &p.doc_id;
    let s = p.section_index.unwrap_or(0);
    let [pa, _] = p.paragraph_range.unwrap_or([0, 0]);
    let [sa, sb] = p.sentence_range.unwrap_or([0, 0]);
    match level {
        ChunkLevel::Document => format!("{doc}#d"),
        ChunkLevel::Section => format!("{doc}#s{s}"),
        ChunkLevel::Paragraph => format!("{doc}#s{s}p{pa}"),
        ChunkLevel::MultiSentence => format!("{doc}#s{s}p{pa}m{sa}-{sb}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub multi_sentence_target_words: usize,
    pub min_sentences_per_chunk: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            multi_sentence_target_words: 350,
            min_sentences_per_chunk: 1,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.multi_sentence_target_words == 0 {
            return Err("multi_sentence_target_words must be at least 1".into());
        }
        if self.min_sentences_per_chunk == 0 {
            return Err("min_sentences_per_chunk must be at least 1".into());
        }
        Ok(())
    }
}

/// Greedy left-to-right grouping of sentences by word count.
///
/// A sentence joins the current group unless that would push the group past
/// `target` words while the group already holds `min_sentences` sentences.
/// Returns inclusive index ranges into `sentence_words`.
pub fn group_sentences(sentence_words: &[usize], target: usize, min_sentences: usize) -> Vec<[usize; 2]> {
    let mut groups = Vec::new();
    let mut start = 0;
    let mut words = 0;
    for (i, &w) in sentence_words.iter().enumerate() {
        let count = i - start;
        if count > 0 && words + w > target && count >= min_sentences {
            groups.push([start, i - 1]);
            start = i;
            words = 0;
        }
        words += w;
    }
    if start < sentence_words.len() {
        groups.push([start, sentence_words.len() - 1]);
    }
    groups
}

/// Multi-sentence chunks of one paragraph. Chunks never cross the paragraph.
pub fn segment_multi_sentence(
    doc_id: &str,
    section_index: usize,
    paragraph: &Paragraph,
    cfg: &SegmenterConfig,
    splitter: &SentenceSplitter,
) -> Vec<Chunk> {
    let sentences = splitter.split(&paragraph.text);
    let lengths: Vec<usize> = sentences.iter().map(|s| word_count(s)).collect();
    group_sentences(&lengths, cfg.multi_sentence_target_words, cfg.min_sentences_per_chunk)
        .into_iter()
        .map(|[a, b]| {
            let text = sentences[a..=b].join(" ");
            Chunk::new(
                ChunkLevel::MultiSentence,
                text,
                Provenance {
                    doc_id: doc_id.to_string(),
                    section_index: Some(section_index),
                    paragraph_range: Some([paragraph.paragraph_index; 2]),
                    sentence_range: Some([a, b]),
                },
            )
        })
        .collect()
}

/// One paragraph-level chunk per paragraph, in document order.
pub fn segment_paragraphs(document: &Document) -> Vec<Chunk> {
    document
        .paragraphs()
        .map(|(section, p)| {
            Chunk::new(
                ChunkLevel::Paragraph,
                p.text.clone(),
                Provenance {
                    doc_id: document.doc_id.clone(),
                    section_index: Some(section.section_index),
                    paragraph_range: Some([p.paragraph_index; 2]),
                    sentence_range: None,
                },
            )
        })
        .collect()
}

/// One empty section placeholder per section followed by the document placeholder.
pub fn make_summary_placeholders(document: &Document) -> Vec<Chunk> {
    let mut out: Vec<Chunk> = document
        .sections
        .iter()
        .map(|s| {
            Chunk::new(
                ChunkLevel::Section,
                String::new(),
                Provenance {
                    doc_id: document.doc_id.clone(),
                    section_index: Some(s.section_index),
                    paragraph_range: None,
                    sentence_range: None,
                },
            )
        })
        .collect();
    out.push(Chunk::new(
        ChunkLevel::Document,
        String::new(),
        Provenance {
            doc_id: document.doc_id.clone(),
            section_index: None,
            paragraph_range: None,
            sentence_range: None,
        },
    ));
    out
}

/// All chunks of a document in a fixed order: the document placeholder, then
/// per section its placeholder followed by each paragraph chunk and that
/// paragraph's multi-sentence chunks.
pub fn segment_document(document: &Document, cfg: &SegmenterConfig, splitter: &SentenceSplitter) -> Vec<Chunk> {
    let mut placeholders = make_summary_placeholders(document);
    let doc_chunk = placeholders.pop().expect("document placeholder");
    let mut section_chunks = placeholders.into_iter();
    let mut paragraph_chunks = segment_paragraphs(document).into_iter();

    let mut out = vec![doc_chunk];
    for section in &document.sections {
        out.extend(section_chunks.next());
        for p in &section.paragraphs {
            out.extend(paragraph_chunks.next());
            out.extend(segment_multi_sentence(
                &document.doc_id,
                section.section_index,
                p,
                cfg,
                splitter,
            ));
        }
    }
    out
}

/// Vanilla baseline chunks: the whole document's sentences merged greedily
/// to the target size, ignoring paragraph and section boundaries.
pub fn segment_vanilla(document: &Document, cfg: &SegmenterConfig, splitter: &SentenceSplitter) -> Vec<Chunk> {
    let mut sentences = Vec::new();
    let mut paragraph_of = Vec::new();
    for (ordinal, (_, p)) in document.paragraphs().enumerate() {
        for s in splitter.split(&p.text) {
            sentences.push(s);
            paragraph_of.push(ordinal);
        }
    }
    let lengths: Vec<usize> = sentences.iter().map(|s| word_count(s)).collect();
    group_sentences(&lengths, cfg.multi_sentence_target_words, cfg.min_sentences_per_chunk)
        .into_iter()
        .enumerate()
        .map(|(k, [a, b])| {
            let text = sentences[a..=b].join(" ");
            Chunk {
                chunk_id: format!("{}#v{k}", document.doc_id),
                level: ChunkLevel::MultiSentence,
                words: word_count(&text),
                text,
                provenance: Provenance {
                    doc_id: document.doc_id.clone(),
                    section_index: None,
                    paragraph_range: Some([paragraph_of[a], paragraph_of[b]]),
                    sentence_range: Some([a, b]),
                },
                is_summary: false,
            }
        })
        .collect()
}
