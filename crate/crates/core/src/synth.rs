//! Seeded synthetic corpora for tests, benchmarks and demos.
//!
//! Text is built from pronounceable pseudo-words so that token overlap
//! between unrelated chunks stays low and planted facts are easy to find.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::answer::ScriptEntry;
use crate::corpus::Document;
use crate::database::ChunkDatabase;
use crate::evaluator::QaPair;
use crate::segmenter::{chunk_id_for, ChunkLevel, Provenance, SegmenterConfig};
use crate::sentence::SentenceSplitter;
use crate::summarizer::{fill_placeholders, Extractor};

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cl", "dr", "gl", "pr", "st", "tr",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ea"];
const CODAS: &[&str] = &["", "", "n", "r", "s", "l", "x", "th"];

/// Shape of a random corpus. Ranges are inclusive.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub documents: usize,
    pub sections: (usize, usize),
    pub paragraphs: (usize, usize),
    pub sentences: (usize, usize),
    pub words: (usize, usize),
    /// Probability that a sentence carries a "Fig. N" style reference.
    pub abbreviation_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            documents: 50,
            sections: (1, 4),
            paragraphs: (1, 5),
            sentences: (1, 12),
            words: (3, 40),
            abbreviation_rate: 0.15,
        }
    }
}

pub struct TextGen {
    rng: ChaCha8Rng,
    unique: usize,
}

impl TextGen {
    pub fn new(seed: u64) -> Self {
        TextGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            unique: 0,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn word(&mut self) -> String {
        let syllables = self.rng.gen_range(1..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(&mut self.rng).unwrap());
            w.push_str(NUCLEI.choose(&mut self.rng).unwrap());
        }
        w.push_str(CODAS.choose(&mut self.rng).unwrap());
        w
    }

    /// A word that never repeats within this generator.
    pub fn unique_word(&mut self) -> String {
        let mut n = self.unique;
        self.unique += 1;
        let mut suffix = String::new();
        loop {
            suffix.push((b'a' + (n % 26) as u8) as char);
            n /= 26;
            if n == 0 {
                break;
            }
        }
        format!("{}q{suffix}", self.word())
    }

    pub fn sentence(&mut self, words: usize, abbreviation_rate: f64) -> String {
        let mut tokens: Vec<String> = (0..words.max(1)).map(|_| self.word()).collect();
        if tokens.len() > 2 && self.rng.gen_bool(abbreviation_rate) {
            let at = self.rng.gen_range(1..tokens.len());
            let figure = format!("(Fig. {})", self.rng.gen_range(1..10));
            tokens.insert(at, figure);
        }
        if self.rng.gen_bool(0.1) {
            let at = self.rng.gen_range(0..tokens.len());
            tokens[at] = self.rng.gen_range(2..2000).to_string();
        }
        let mut s = tokens.join(" ");
        if let Some(first) = s.get(..1) {
            let upper = first.to_uppercase();
            s.replace_range(..1, &upper);
        }
        if s.starts_with(|c: char| c.is_ascii_digit()) {
            s.insert_str(0, "About ");
        }
        let end = *[".", ".", ".", "?", "!"].choose(&mut self.rng).unwrap();
        s.push_str(end);
        s
    }

    fn range(&mut self, (lo, hi): (usize, usize)) -> usize {
        self.rng.gen_range(lo..=hi.max(lo))
    }

    pub fn paragraph(&mut self, cfg: &SynthConfig) -> Vec<String> {
        let n = self.range(cfg.sentences);
        (0..n)
            .map(|_| {
                let w = self.range(cfg.words);
                self.sentence(w, cfg.abbreviation_rate)
            })
            .collect()
    }
}

/// Generates a random corpus; identical seeds give identical corpora.
pub fn generate(seed: u64, cfg: &SynthConfig) -> Vec<Document> {
    let mut g = TextGen::new(seed);
    (0..cfg.documents)
        .map(|d| {
            let n_sections = g.range(cfg.sections);
            let sections = (0..n_sections)
                .map(|_| {
                    let heading = g.word();
                    let n_paragraphs = g.range(cfg.paragraphs);
                    let paragraphs = (0..n_paragraphs).map(|_| g.paragraph(cfg).join(" ")).collect();
                    (heading, paragraphs)
                })
                .collect();
            let title = g.sentence(4, 0.0);
            Document::from_raw(format!("doc{d:04}"), title, sections)
        })
        .collect()
}

/// Paragraphs per section for each toy document: 3 documents, 7 sections,
/// 20 paragraphs.
pub const TOY_SHAPE: [&[usize]; 3] = [&[3, 3], &[3, 3, 2], &[3, 3]];

/// Multi-sentence target used with the toy corpus so that paragraphs split
/// into several multi-sentence chunks.
pub const TOY_TARGET_WORDS: usize = 40;

/// Sentences of the toy corpus, nested as document, section, paragraph.
pub fn toy_sentences() -> Vec<Vec<Vec<Vec<String>>>> {
    let mut g = TextGen::new(0x746f79);
    let cfg = SynthConfig {
        sentences: (4, 7),
        words: (8, 16),
        abbreviation_rate: 0.2,
        ..SynthConfig::default()
    };
    TOY_SHAPE
        .iter()
        .map(|shape| {
            shape
                .iter()
                .map(|&n| (0..n).map(|_| g.paragraph(&cfg)).collect())
                .collect()
        })
        .collect()
}

/// A small fixed corpus whose paragraphs are long enough to split at
/// [`TOY_TARGET_WORDS`].
pub fn toy_corpus() -> Vec<Document> {
    toy_sentences()
        .into_iter()
        .enumerate()
        .map(|(d, sections)| {
            let sections = sections
                .into_iter()
                .enumerate()
                .map(|(s, paragraphs)| {
                    let paragraphs = paragraphs.into_iter().map(|p| p.join(" ")).collect();
                    (format!("Section {s}"), paragraphs)
                })
                .collect();
            Document::from_raw(format!("toy{d}"), format!("Toy document {d}"), sections)
        })
        .collect()
}

/// What a planted question needs in order to be answerable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Need {
    /// A single sentence, present in paragraph and multi-sentence chunks.
    Fact,
    /// A section summary.
    SectionWide,
}

#[derive(Debug, Clone)]
pub struct PlantedQuestion {
    pub qa: QaPair,
    pub need: Need,
    /// The chunk holding the evidence at its natural level.
    pub chunk_id: String,
}

/// A corpus with questions and a script that answers a question only when
/// its evidence is in the retrieved context.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub documents: Vec<Document>,
    pub questions: Vec<PlantedQuestion>,
    pub script: Vec<ScriptEntry>,
}

impl Scenario {
    pub fn qa_pairs(&self) -> Vec<QaPair> {
        self.questions.iter().map(|q| q.qa.clone()).collect()
    }
}

/// Builds a corpus where half the questions need one planted sentence and
/// half need the summary of a whole section.
///
/// Every paragraph opens with a sentence carrying a unique topic word, so a
/// section-wide question naming a section's topics is closest to that
/// section's summary. Section summaries are computed with `extractor`.
pub fn ablation_scenario(
    seed: u64,
    documents: usize,
    segmenter: &SegmenterConfig,
    splitter: &SentenceSplitter,
    extractor: &dyn Extractor,
) -> Scenario {
    let mut g = TextGen::new(seed);
    let cfg = SynthConfig {
        sentences: (3, 6),
        words: (6, 12),
        abbreviation_rate: 0.0,
        ..SynthConfig::default()
    };
    let mut docs = Vec::with_capacity(documents);
    let mut facts = Vec::with_capacity(documents);
    let mut topics = Vec::with_capacity(documents);
    for d in 0..documents {
        let doc_id = format!("abl{d:03}");
        let n_sections = g.rng().gen_range(2..=3);
        let fact_section = g.rng().gen_range(0..n_sections);
        let mut doc_topics = Vec::new();
        let mut sections = Vec::new();
        for s in 0..n_sections {
            let n_paragraphs = g.rng().gen_range(2..=3);
            let fact_paragraph = g.rng().gen_range(0..n_paragraphs);
            let mut section_topics = Vec::new();
            let mut paragraphs = Vec::new();
            for p in 0..n_paragraphs {
                let mut sentences = g.paragraph(&cfg);
                let topic = g.unique_word();
                let opener = format!("{} {topic} {} {}.", capitalize(&g.word()), g.word(), g.word());
                sentences.insert(0, opener);
                section_topics.push(topic);
                if s == fact_section && p == fact_paragraph {
                    let (property, specimen) = (g.unique_word(), g.unique_word());
                    let value = g.rng().gen_range(10..1000);
                    let fact = format!("The {property} of specimen {specimen} was measured at {value} units.");
                    let question = format!("What was the {property} of specimen {specimen} measured at?");
                    let at = g.rng().gen_range(1..=sentences.len());
                    sentences.insert(at, fact.clone());
                    facts.push((doc_id.clone(), s, p, fact, question));
                }
                paragraphs.push(sentences.join(" "));
            }
            doc_topics.push(section_topics);
            sections.push((g.word(), paragraphs));
        }
        topics.push(doc_topics);
        docs.push(Document::from_raw(doc_id, format!("Ablation document {d}"), sections));
    }

    let mut db = ChunkDatabase::from_documents(&docs, segmenter, splitter).expect("generated ids are unique");
    let chunks = db.chunks_mut().expect("not finalized");
    let report = fill_placeholders(&docs, chunks, extractor, 1);
    assert!(report.failed.is_empty(), "extractor failed on synthetic corpus");

    let mut questions = Vec::new();
    for (d, doc) in docs.iter().enumerate() {
        let (doc_id, s, p, fact, question) = &facts[d];
        questions.push(PlantedQuestion {
            qa: QaPair {
                question_id: format!("{doc_id}-fact"),
                question: question.clone(),
                ground_truth: fact.clone(),
                provenance: None,
            },
            need: Need::Fact,
            chunk_id: chunk_id_for(ChunkLevel::Paragraph, &provenance(doc_id, *s, Some(*p))),
        });

        let s = g.rng().gen_range(0..doc.sections.len());
        let section_id = chunk_id_for(ChunkLevel::Section, &provenance(&doc.doc_id, s, None));
        let summary = db.get(&section_id).expect("section placeholder").text.clone();
        let question = format!("Give an overview of {} in this section", topics[d][s].join(" "));
        questions.push(PlantedQuestion {
            qa: QaPair {
                question_id: format!("{}-section", doc.doc_id),
                question,
                ground_truth: summary,
                provenance: None,
            },
            need: Need::SectionWide,
            chunk_id: section_id,
        });
    }
    let script = questions
        .iter()
        .map(|q| ScriptEntry {
            question: q.qa.question.clone(),
            answer: q.qa.ground_truth.clone(),
            requires: Some(q.qa.ground_truth.clone()),
        })
        .collect();
    Scenario {
        documents: docs,
        questions,
        script,
    }
}

fn provenance(doc_id: &str, section: usize, paragraph: Option<usize>) -> Provenance {
    Provenance {
        doc_id: doc_id.to_string(),
        section_index: Some(section),
        paragraph_range: paragraph.map(|p| [p, p]),
        sentence_range: None,
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summarizer::MockExtractor;

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig {
            documents: 5,
            ..SynthConfig::default()
        };
        assert_eq!(generate(7, &cfg), generate(7, &cfg));
        assert_ne!(generate(7, &cfg), generate(8, &cfg));
    }

    #[test]
    fn toy_shape() {
        let docs = toy_corpus();
        assert_eq!(docs.len(), 3);
        assert_eq!(docs.iter().map(|d| d.sections.len()).sum::<usize>(), 7);
        assert_eq!(docs.iter().map(Document::paragraph_count).sum::<usize>(), 20);
    }

    #[test]
    fn unique_words_do_not_repeat() {
        let mut g = TextGen::new(1);
        let words: std::collections::HashSet<_> = (0..2000).map(|_| g.unique_word()).collect();
        assert_eq!(words.len(), 2000);
    }

    #[test]
    fn scenario_evidence_is_in_its_chunk() {
        let splitter = SentenceSplitter::default();
        let sc = ablation_scenario(3, 4, &SegmenterConfig::default(), &splitter, &MockExtractor::default());
        assert_eq!(sc.questions.len(), 8);
        let mut db = ChunkDatabase::from_documents(&sc.documents, &SegmenterConfig::default(), &splitter).unwrap();
        fill_placeholders(&sc.documents, db.chunks_mut().unwrap(), &MockExtractor::default(), 1);
        for q in &sc.questions {
            let chunk = db.get(&q.chunk_id).unwrap();
            assert!(chunk.text.contains(&q.qa.ground_truth), "{}", q.qa.question_id);
        }
    }
}
