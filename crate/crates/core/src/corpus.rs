//! Document structure and the newline-delimited corpus interchange format.
//!
//! Each line of a corpus file holds one document:
//!
//! ```text
//! {"doc_id":"d1","title":"T","sections":[{"heading":"Intro","paragraphs":["A b c.","D e f."]}]}
//! ```
//!
//! Paragraph text is whitespace-normalized on ingestion: leading and trailing
//! whitespace is removed and internal runs collapse to a single space.

use std::collections::HashSet;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub section_index: usize,
    pub heading: String,
    pub paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub paragraph_index: usize,
    pub text: String,
}

impl Document {
    /// Builds a document from raw headings and paragraph strings, assigning
    /// ordinals and normalizing paragraph whitespace.
    pub fn from_raw(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        sections: Vec<(String, Vec<String>)>,
    ) -> Self {
        let sections = sections
            .into_iter()
            .enumerate()
            .map(|(section_index, (heading, paragraphs))| Section {
                section_index,
                heading,
                paragraphs: paragraphs
                    .iter()
                    .enumerate()
                    .map(|(paragraph_index, text)| Paragraph {
                        paragraph_index,
                        text: normalize_whitespace(text),
                    })
                    .collect(),
            })
            .collect();
        Document {
            doc_id: doc_id.into(),
            title: title.into(),
            sections,
        }
    }

    pub fn paragraph_count(&self) -> usize {
        self.sections.iter().map(|s| s.paragraphs.len()).sum()
    }

    pub fn paragraphs(&self) -> impl Iterator<Item = (&Section, &Paragraph)> {
        self.sections
            .iter()
            .flat_map(|s| s.paragraphs.iter().map(move |p| (s, p)))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: field `{field}`: {reason}")]
    Malformed {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("line {line}: duplicate doc_id \"{doc_id}\"")]
    DuplicateId { line: usize, doc_id: String },
    #[error("line {line}: document \"{doc_id}\" has no sections")]
    NoSections { line: usize, doc_id: String },
    #[error("line {line}: document \"{doc_id}\" section {section_index} has no paragraphs")]
    EmptySection {
        line: usize,
        doc_id: String,
        section_index: usize,
    },
}

/// Number of maximal whitespace-delimited tokens in `text`.
///
/// This is the only word-counting rule in the crate; budgets and statistics
/// all go through it.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Trims `text` and collapses every internal whitespace run to one space.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Parses a corpus file. Document order is preserved.
pub fn parse_corpus(input: &str) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    let body = input.strip_suffix('\n').unwrap_or(input);
    if body.is_empty() {
        return Ok(docs);
    }
    for (i, raw) in body.split('\n').enumerate() {
        let line = i + 1;
        let doc = parse_record(raw, line)?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(CorpusError::DuplicateId {
                line,
                doc_id: doc.doc_id,
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

fn malformed(line: usize, field: &str, reason: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn string_field<'a>(obj: &'a Value, field: &str, line: usize) -> Result<&'a str, CorpusError> {
    match obj.get(field) {
        None => Err(malformed(line, field, "missing")),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(malformed(line, field, "expected a string")),
    }
}

fn array_field<'a>(obj: &'a Value, field: &str, line: usize) -> Result<&'a Vec<Value>, CorpusError> {
    match obj.get(field) {
        None => Err(malformed(line, field, "missing")),
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(malformed(line, field, "expected an array")),
    }
}

fn parse_record(raw: &str, line: usize) -> Result<Document, CorpusError> {
    let value: Value = serde_json::from_str(raw.trim_end_matches('\r'))
        .map_err(|e| malformed(line, "<record>", e.to_string()))?;
    if !value.is_object() {
        return Err(malformed(line, "<record>", "expected an object"));
    }
    let doc_id = string_field(&value, "doc_id", line)?;
    if doc_id.is_empty() {
        return Err(malformed(line, "doc_id", "must be non-empty"));
    }
    let title = string_field(&value, "title", line)?;
    let raw_sections = array_field(&value, "sections", line)?;
    if raw_sections.is_empty() {
        return Err(CorpusError::NoSections {
            line,
            doc_id: doc_id.to_string(),
        });
    }

    let mut sections = Vec::with_capacity(raw_sections.len());
    for (section_index, raw_section) in raw_sections.iter().enumerate() {
        let path = format!("sections[{section_index}]");
        if !raw_section.is_object() {
            return Err(malformed(line, &path, "expected an object"));
        }
        let heading = string_field(raw_section, "heading", line)
            .map_err(|e| prefix_field(e, &path))?;
        let raw_paragraphs = array_field(raw_section, "paragraphs", line)
            .map_err(|e| prefix_field(e, &path))?;
        if raw_paragraphs.is_empty() {
            return Err(CorpusError::EmptySection {
                line,
                doc_id: doc_id.to_string(),
                section_index,
            });
        }
        let mut paragraphs = Vec::with_capacity(raw_paragraphs.len());
        for (paragraph_index, p) in raw_paragraphs.iter().enumerate() {
            let field = format!("{path}.paragraphs[{paragraph_index}]");
            let Value::String(text) = p else {
                return Err(malformed(line, &field, "expected a string"));
            };
            let text = normalize_whitespace(text);
            if text.is_empty() {
                return Err(malformed(line, &field, "paragraph text is empty"));
            }
            paragraphs.push(Paragraph {
                paragraph_index,
                text,
            });
        }
        sections.push(Section {
            section_index,
            heading: heading.to_string(),
            paragraphs,
        });
    }

    Ok(Document {
        doc_id: doc_id.to_string(),
        title: title.to_string(),
        sections,
    })
}

fn prefix_field(err: CorpusError, prefix: &str) -> CorpusError {
    match err {
        CorpusError::Malformed {
            line,
            field,
            reason,
        } => CorpusError::Malformed {
            line,
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    doc_id: &'a str,
    title: &'a str,
    sections: Vec<SectionOut<'a>>,
}

#[derive(Serialize)]
struct SectionOut<'a> {
    heading: &'a str,
    paragraphs: Vec<&'a str>,
}

/// Writes documents back in the interchange format, one LF-terminated record per line.
pub fn write_corpus<W: Write>(docs: &[Document], mut out: W) -> io::Result<()> {
    for doc in docs {
        let record = RecordOut {
            doc_id: &doc.doc_id,
            title: &doc.title,
            sections: doc
                .sections
                .iter()
                .map(|s| SectionOut {
                    heading: &s.heading,
                    paragraphs: s.paragraphs.iter().map(|p| p.text.as_str()).collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn corpus_to_string(docs: &[Document]) -> String {
    let mut buf = Vec::new();
    write_corpus(docs, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
