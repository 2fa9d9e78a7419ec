//! Prompt assembly and answer generation through a chat backend.

use std::collections::HashMap;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, HttpClient};
use crate::embed::stable_hash;
use crate::segmenter::Chunk;

pub const DEFAULT_TEMPLATE: &str = "Answer the question using only the context below. \
Answer in short, complete sentences.\n\nContext:\n{context}\n\nQuestion: {question}\nAnswer:";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnswerError {
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("no chunks to build a context from")]
    EmptyContext,
    #[error("invalid in-context examples, line {line}: {reason}")]
    Examples { line: usize, reason: String },
    #[error("chat backend failed after {attempts} attempts: {last}")]
    Exhausted {
        attempts: usize,
        last: BackendError,
        record: Box<AnswerRecord>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclExample {
    pub question: String,
    pub answer: String,
}

/// Parses newline-delimited `{question, answer}` records.
pub fn parse_icl_examples(text: &str) -> Result<Vec<IclExample>, AnswerError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| AnswerError::Examples {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Template with exactly one `{context}` and one `{question}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
    examples: Vec<IclExample>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(DEFAULT_TEMPLATE, Vec::new()).expect("default template is valid")
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>, examples: Vec<IclExample>) -> Result<Self, AnswerError> {
        let text = text.into();
        for placeholder in ["{context}", "{question}"] {
            match text.matches(placeholder).count() {
                1 => {}
                0 => return Err(AnswerError::Template(format!("missing {placeholder}"))),
                n => return Err(AnswerError::Template(format!("{placeholder} appears {n} times"))),
            }
        }
        Ok(PromptTemplate { text, examples })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn examples(&self) -> &[IclExample] {
        &self.examples
    }

    /// Fills the placeholders in one pass, so placeholder-like text inside
    /// the context or question is left alone. Examples come first.
    pub fn render(&self, context: &str, question: &str) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str("Question: ");
            out.push_str(&ex.question);
            out.push_str("\nAnswer: ");
            out.push_str(&ex.answer);
            out.push_str("\n\n");
        }
        let c = self.text.find("{context}").expect("validated");
        let q = self.text.find("{question}").expect("validated");
        let (first, first_val, second, second_val) = if c < q {
            (c, (context, "{context}".len()), q, (question, "{question}".len()))
        } else {
            (q, (question, "{question}".len()), c, (context, "{context}".len()))
        };
        out.push_str(&self.text[..first]);
        out.push_str(first_val.0);
        out.push_str(&self.text[first + first_val.1..second]);
        out.push_str(second_val.0);
        out.push_str(&self.text[second + second_val.1..]);
        out
    }
}

/// Concatenates chunks in retrieval order, each under a
/// `[chunk <id> | level <level>]` header, separated by blank lines.
pub fn assemble_context(chunks: &[&Chunk]) -> Result<String, AnswerError> {
    if chunks.is_empty() {
        return Err(AnswerError::EmptyContext);
    }
    Ok(chunks
        .iter()
        .map(|c| format!("[chunk {} | level {}]\n{}", c.chunk_id, c.level, c.text))
        .collect::<Vec<_>>()
        .join("\n\n"))
}

pub struct ChatRequest<'a> {
    pub prompt: &'a str,
    pub question: &'a str,
    pub context: &'a str,
}

/// The answer-generating model.
pub trait ChatBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EchoMode {
    Question,
    Context,
}

/// Returns the question or the context verbatim.
#[derive(Debug, Clone)]
pub struct EchoBackend {
    mode: EchoMode,
}

impl EchoBackend {
    pub fn new(mode: EchoMode) -> Self {
        EchoBackend { mode }
    }
}

impl ChatBackend for EchoBackend {
    fn backend_id(&self) -> &str {
        match self.mode {
            EchoMode::Question => "echo-question",
            EchoMode::Context => "echo-context",
        }
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        Ok(match self.mode {
            EchoMode::Question => request.question.to_string(),
            EchoMode::Context => request.context.to_string(),
        })
    }
}

/// One canned answer. When `requires` is set the answer is only given if
/// that text occurs in the context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires: Option<String>,
}

/// Canned answers keyed by a hash of the question.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    entries: HashMap<u64, ScriptEntry>,
    fallback: String,
}

const SCRIPT_SEED: u64 = 0x7363_7269_7074;

impl ScriptedBackend {
    pub const FALLBACK: &'static str = "The context does not contain the answer.";

    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        ScriptedBackend {
            entries: entries
                .into_iter()
                .map(|e| (stable_hash(SCRIPT_SEED, e.question.as_bytes()), e))
                .collect(),
            fallback: Self::FALLBACK.to_string(),
        }
    }

    /// Parses a newline-delimited transcript of `{question, answer, requires?}` records.
    pub fn parse(text: &str) -> Result<Self, AnswerError> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<ScriptEntry>(l).map_err(|e| AnswerError::Examples {
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ScriptedBackend {
    fn backend_id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        let key = stable_hash(SCRIPT_SEED, request.question.as_bytes());
        let answer = match self.entries.get(&key) {
            Some(e) if e.requires.as_deref().is_none_or(|r| request.context.contains(r)) => &e.answer,
            _ => &self.fallback,
        };
        Ok(answer.clone())
    }
}

/// Chat backend over a chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    client: HttpClient,
    backend_id: String,
}

impl HttpChatBackend {
    pub fn new(client: HttpClient) -> Self {
        let backend_id = format!("http-chat:{}", client.settings().model);
        HttpChatBackend { client, backend_id }
    }
}

impl ChatBackend for HttpChatBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        self.client.chat(request.prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: usize,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    pub question: String,
    pub answer: String,
    /// Identifies the retrieval audit record this answer was generated from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_ref: Option<String>,
    pub backend_id: String,
    pub prompt_bytes: usize,
    pub attempts: usize,
    pub status: AnswerStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Renders the prompt and calls the backend, retrying with exponential backoff.
pub fn generate_answer(
    question: &str,
    context: &str,
    template: &PromptTemplate,
    backend: &dyn ChatBackend,
    retry: &RetryPolicy,
) -> Result<AnswerRecord, AnswerError> {
    let prompt = template.render(context, question);
    let mut record = AnswerRecord {
        question_id: None,
        question: question.to_string(),
        answer: String::new(),
        retrieval_ref: None,
        backend_id: backend.backend_id().to_string(),
        prompt_bytes: prompt.len(),
        attempts: 0,
        status: AnswerStatus::Failed,
        error: None,
    };
    let request = ChatRequest {
        prompt: &prompt,
        question,
        context,
    };
    let attempts = retry.attempts.max(1);
    let mut delay = retry.base_delay;
    let mut last = BackendError::Other("no attempt made".into());
    for attempt in 1..=attempts {
        record.attempts = attempt;
        match backend.complete(&request) {
            Ok(answer) if !answer.trim().is_empty() => {
                record.answer = answer.trim().to_string();
                record.status = AnswerStatus::Ok;
                return Ok(record);
            }
            Ok(_) => last = BackendError::EmptyOutput,
            Err(e) => last = e,
        }
        log::warn!("chat attempt {attempt}/{attempts} failed: {last}");
        if attempt < attempts && !delay.is_zero() {
            thread::sleep(delay);
            delay *= 2;
        }
    }
    record.error = Some(last.to_string());
    Err(AnswerError::Exhausted {
        attempts,
        last,
        record: Box::new(record),
    })
}
