//! Rule-based sentence splitting.
//!
//! A boundary falls after a token ending in `.`, `!` or `?` when the next
//! token starts with an uppercase letter or a digit, unless the text up to
//! that point ends with an entry of the abbreviation stop-list.

use std::collections::HashSet;
use std::sync::LazyLock;

const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

static DEFAULT_SPLITTER: LazyLock<SentenceSplitter> =
    LazyLock::new(|| SentenceSplitter::new(AbbreviationList::parse(DEFAULT_ABBREVIATIONS)));

/// Abbreviations that never end a sentence, stored lowercased and split into tokens.
#[derive(Debug, Clone, Default)]
pub struct AbbreviationList {
    entries: HashSet<Vec<String>>,
    max_tokens: usize,
    version: Option<String>,
}

impl AbbreviationList {
    /// Parses the stop-list file format: one entry per line, `#` starts a comment,
    /// and a `# version: N` comment records the list version.
    pub fn parse(text: &str) -> Self {
        let mut list = AbbreviationList::default();
        for line in text.lines() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version:") {
                    list.version = Some(v.trim().to_string());
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            list.insert(line);
        }
        list
    }

    pub fn insert(&mut self, abbreviation: &str) {
        let tokens: Vec<String> = abbreviation
            .split_whitespace()
            .map(str::to_lowercase)
            .collect();
        if tokens.is_empty() {
            return;
        }
        self.max_tokens = self.max_tokens.max(tokens.len());
        self.entries.insert(tokens);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in sorted order, each as its space-joined tokens.
    pub fn entries(&self) -> Vec<String> {
        let mut v: Vec<String> = self.entries.iter().map(|t| t.join(" ")).collect();
        v.sort();
        v
    }

    pub fn version(&self) -> Option<&str> {
        self.version.as_deref()
    }

    /// True when the trailing tokens of `tokens` form a stop-list entry.
    fn ends_with_abbreviation(&self, tokens: &[&str]) -> bool {
        for n in 1..=self.max_tokens.min(tokens.len()) {
            let tail = &tokens[tokens.len() - n..];
            let key: Vec<String> = tail
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    // only the first token may carry opening punctuation such as "(Fig."
                    let t = if i == 0 {
                        t.trim_start_matches(|c: char| !c.is_alphanumeric())
                    } else {
                        t
                    };
                    t.to_lowercase()
                })
                .collect();
            if self.entries.contains(&key) {
                return true;
            }
        }
        false
    }
}

#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: AbbreviationList,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        DEFAULT_SPLITTER.clone()
    }
}

impl SentenceSplitter {
    pub fn new(abbreviations: AbbreviationList) -> Self {
        SentenceSplitter { abbreviations }
    }

    pub fn abbreviations(&self) -> &AbbreviationList {
        &self.abbreviations
    }

    /// Splits `text` into sentences. Joining the result with single spaces
    /// yields the whitespace-normalized input.
    pub fn split(&self, text: &str) -> Vec<String> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let mut sentences = Vec::new();
        let mut start = 0;
        for i in 0..tokens.len() {
            let last = i + 1 == tokens.len();
            if last || self.is_boundary(&tokens[start..=i], tokens[i + 1]) {
                sentences.push(tokens[start..=i].join(" "));
                start = i + 1;
            }
        }
        sentences
    }

    fn is_boundary(&self, current: &[&str], next: &str) -> bool {
        let token = current[current.len() - 1];
        if !token.ends_with(['.', '!', '?']) {
            return false;
        }
        let opens_sentence = next
            .chars()
            .next()
            .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit());
        if !opens_sentence {
            return false;
        }
        !(token.ends_with('.') && self.abbreviations.ends_with_abbreviation(current))
    }
}

/// Splits with the built-in abbreviation list.
pub fn split_sentences(text: &str) -> Vec<String> {
    DEFAULT_SPLITTER.split(text)
}
