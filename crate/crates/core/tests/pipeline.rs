use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use malrag_core::answer::{ChatRequest, RetryPolicy, DEFAULT_TEMPLATE};
use malrag_core::backend::BackendError;
use malrag_core::config::{Backends, Preset};
use malrag_core::corpus::corpus_to_string;
use malrag_core::evaluator::{QaPair, QuestionStatus};
use malrag_core::pipeline::{
    check_stats, cmd_eval, cmd_index, cmd_query, cmd_stats, open_store, EvalOptions, IndexOptions, IndexStatus,
};
use malrag_core::store::{ChunkStore, CHUNKS_FILE, MANIFEST_FILE, VECTORS_FILE};
use malrag_core::summarizer::TaskKind;
use malrag_core::synth;
use malrag_core::{
    ChatBackend, ChunkLevel, EchoBackend, EchoMode, Embedder, Extractor, HashingEmbedder, MockExtractor,
    PromptTemplate, ScriptEntry, ScriptedBackend, SegmenterConfig, SentenceSplitter, Stage,
};
use tempfile::TempDir;

struct Fixture {
    _dir: TempDir,
    corpus: PathBuf,
    store: PathBuf,
    splitter: SentenceSplitter,
}

impl Fixture {
    fn toy() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        fs::write(&corpus, corpus_to_string(&synth::toy_corpus())).unwrap();
        let store = dir.path().join("store");
        Fixture {
            _dir: dir,
            corpus,
            store,
            splitter: SentenceSplitter::default(),
        }
    }

    fn options(&self) -> IndexOptions<'_> {
        self.options_for(&self.store)
    }

    fn options_for<'a>(&'a self, store: &'a Path) -> IndexOptions<'a> {
        IndexOptions {
            corpus: &self.corpus,
            store,
            segmenter: SegmenterConfig {
                multi_sentence_target_words: synth::TOY_TARGET_WORDS,
                min_sentences_per_chunk: 1,
            },
            splitter: &self.splitter,
            parallelism: 3,
            batch_size: 8,
        }
    }
}

/// Behaves like the mock extractor but fails on one document's text.
struct FlakyExtractor {
    inner: MockExtractor,
    poison: String,
}

impl Extractor for FlakyExtractor {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn extract(&self, task: TaskKind, inputs: &[String]) -> Result<String, BackendError> {
        if inputs.iter().any(|i| i.contains(&self.poison)) {
            return Err(BackendError::Transport("connection reset".into()));
        }
        self.inner.extract(task, inputs)
    }
}

/// Hashing embedder that counts calls and fails once a call limit is hit.
struct CountingEmbedder {
    inner: HashingEmbedder,
    calls: AtomicUsize,
    fail_from: usize,
}

impl CountingEmbedder {
    fn new(fail_from: usize) -> Self {
        CountingEmbedder {
            inner: HashingEmbedder::default(),
            calls: AtomicUsize::new(0),
            fail_from,
        }
    }
}

impl Embedder for CountingEmbedder {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.fail_from {
            return Err(BackendError::Status {
                status: 503,
                body: "overloaded".into(),
            });
        }
        self.inner.embed(texts)
    }
}

fn quick_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 2,
        base_delay: Duration::ZERO,
    }
}

fn template() -> PromptTemplate {
    PromptTemplate::new(DEFAULT_TEMPLATE, vec![]).unwrap()
}

#[test]
fn toy_index_counts() {
    let fx = Fixture::toy();
    let out = cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default()).unwrap();
    assert_eq!(out.status, IndexStatus::Built);
    let m = &out.manifest;
    let count = |l| m.level(l).unwrap().count;
    assert_eq!(count(ChunkLevel::Document), 3);
    assert_eq!(count(ChunkLevel::Section), 7);
    assert_eq!(count(ChunkLevel::Paragraph), 20);
    assert!(count(ChunkLevel::MultiSentence) >= 20);
    assert_eq!(m.summary_records, 10);
    assert_eq!(m.vector_records, m.chunk_records + m.baseline.count);
    check_stats(m).unwrap();
}

#[test]
fn rerun_on_finalized_store_is_a_no_op() {
    let fx = Fixture::toy();
    cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default()).unwrap();
    let before = fs::read(fx.store.join(MANIFEST_FILE)).unwrap();
    let embedder = CountingEmbedder::new(usize::MAX);
    let out = cmd_index(&fx.options(), &MockExtractor::default(), &embedder).unwrap();
    assert_eq!(out.status, IndexStatus::AlreadyFinalized);
    assert_eq!(embedder.calls.load(Ordering::SeqCst), 0);
    assert_eq!(fs::read(fx.store.join(MANIFEST_FILE)).unwrap(), before);
}

#[test]
fn missing_corpus_fails_before_any_work() {
    let fx = Fixture::toy();
    fs::remove_file(&fx.corpus).unwrap();
    let err = cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default()).unwrap_err();
    assert_eq!(err.stage, Stage::Config);
    assert!(!fx.store.exists());
}

#[test]
fn malformed_corpus_is_a_parse_error() {
    let fx = Fixture::toy();
    fs::write(&fx.corpus, "{\"doc_id\":\"x\",\"title\":\"t\",\"sections\":[]}\n").unwrap();
    let err = cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default()).unwrap_err();
    assert_eq!(err.stage, Stage::Parse);
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn finalized_store_rejects_a_different_corpus() {
    let fx = Fixture::toy();
    cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default()).unwrap();
    let mut docs = synth::toy_corpus();
    docs.pop();
    fs::write(&fx.corpus, corpus_to_string(&docs)).unwrap();
    let err = cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default()).unwrap_err();
    assert_eq!(err.stage, Stage::Store);
}

#[test]
fn summarize_failure_names_the_document_and_resumes() {
    let fx = Fixture::toy();
    let docs = synth::toy_corpus();
    let poison = docs[1].sections[0].paragraphs[0].text.split(' ').nth(2).unwrap().to_string();
    let flaky = FlakyExtractor {
        inner: MockExtractor::default(),
        poison,
    };
    let err = cmd_index(&fx.options(), &flaky, &HashingEmbedder::default()).unwrap_err();
    assert_eq!(err.stage, Stage::Summarize);
    assert_eq!(err.exit_code(), 3);
    assert_eq!(err.doc_id.as_deref(), Some("toy1"));
    assert!(!ChunkStore::new(&fx.store).is_finalized());

    let out = cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default()).unwrap();
    assert_eq!(out.status, IndexStatus::Resumed);

    let clean = fx._dir.path().join("clean");
    let reference = cmd_index(&fx.options_for(&clean), &MockExtractor::default(), &HashingEmbedder::default()).unwrap();
    assert_eq!(out.manifest, reference.manifest);
    for file in [CHUNKS_FILE, VECTORS_FILE, MANIFEST_FILE] {
        assert_eq!(fs::read(fx.store.join(file)).unwrap(), fs::read(clean.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn embed_failure_keeps_finished_batches() {
    let fx = Fixture::toy();
    let failing = CountingEmbedder::new(3);
    let err = cmd_index(&fx.options(), &MockExtractor::default(), &failing).unwrap_err();
    assert_eq!(err.stage, Stage::Embed);
    assert_eq!(err.exit_code(), 4);

    let resumed = CountingEmbedder::new(usize::MAX);
    let out = cmd_index(&fx.options(), &MockExtractor::default(), &resumed).unwrap();
    assert_eq!(out.status, IndexStatus::Resumed);
    // Three batches of eight were stored before the failure.
    let remaining = out.manifest.vector_records - 3 * 8;
    assert_eq!(resumed.calls.load(Ordering::SeqCst), remaining.div_ceil(8));

    let clean = fx._dir.path().join("clean");
    cmd_index(&fx.options_for(&clean), &MockExtractor::default(), &HashingEmbedder::default()).unwrap();
    assert_eq!(
        fs::read(fx.store.join(VECTORS_FILE)).unwrap(),
        fs::read(clean.join(VECTORS_FILE)).unwrap()
    );
}

#[test]
fn open_detects_records_that_disagree_with_the_manifest() {
    let fx = Fixture::toy();
    cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default()).unwrap();
    let path = fx.store.join(CHUNKS_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let truncated: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&path, truncated).unwrap();
    assert!(open_store(&fx.store).is_err());
}

#[test]
fn stats_requires_a_finalized_store() {
    let fx = Fixture::toy();
    let err = cmd_stats(&fx.store).unwrap_err();
    assert_eq!(err.stage, Stage::Store);
    cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default()).unwrap();
    let table = cmd_stats(&fx.store).unwrap();
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn stats_guard_rejects_a_level_without_chunks() {
    let fx = Fixture::toy();
    let mut m = cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default())
        .unwrap()
        .manifest;
    m.levels.retain(|l| l.level != ChunkLevel::MultiSentence);
    assert!(check_stats(&m).is_err());
}

#[test]
fn query_with_nothing_to_embed_is_a_retrieve_error() {
    let fx = Fixture::toy();
    cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default()).unwrap();
    let (_, db) = open_store(&fx.store).unwrap();
    let err = cmd_query(
        &db,
        "   ",
        &Preset::all()[0].retriever_config(),
        &HashingEmbedder::default(),
        &EchoBackend::new(EchoMode::Question),
        &template(),
        &quick_retry(),
    )
    .unwrap_err();
    assert_eq!(err.stage, Stage::Retrieve);
    assert_eq!(err.exit_code(), 5);
}

fn indexed_toy() -> (Fixture, malrag_core::ChunkDatabase) {
    let fx = Fixture::toy();
    cmd_index(&fx.options(), &MockExtractor::default(), &HashingEmbedder::default()).unwrap();
    let (_, db) = open_store(&fx.store).unwrap();
    (fx, db)
}

/// One question per paragraph chunk, asking with the chunk's own text.
fn planted(db: &malrag_core::ChunkDatabase) -> (Vec<QaPair>, Vec<ScriptEntry>) {
    let splitter = SentenceSplitter::default();
    db.chunks()
        .iter()
        .filter(|c| c.level == ChunkLevel::Paragraph)
        .map(|c| {
            let answer = splitter.split(&c.text).remove(0);
            let qa = QaPair {
                question_id: c.chunk_id.clone(),
                question: c.text.clone(),
                ground_truth: answer.clone(),
                provenance: None,
            };
            let entry = ScriptEntry {
                question: c.text.clone(),
                answer,
                requires: Some(c.text.clone()),
            };
            (qa, entry)
        })
        .unzip()
}

#[test]
fn planted_self_retrieval_scores_one_under_mal() {
    let (_fx, db) = indexed_toy();
    let (qa, script) = planted(&db);
    let backends = Backends::mock(Box::new(ScriptedBackend::new(script)));
    let opts = EvalOptions {
        retriever: "mal-tau05".parse::<Preset>().unwrap().retriever_config(),
        gold_context: false,
        parallelism: 4,
    };
    let out = cmd_eval(&db, &qa, &opts, &backends, &template(), &quick_retry());
    assert_eq!(out.report.questions.len(), 20);
    for q in &out.report.questions {
        assert_eq!(q.f1, 1.0, "{}", q.question_id);
    }
}

#[test]
fn gold_context_with_echo_backend_has_full_recall() {
    let (_fx, db) = indexed_toy();
    let (qa, _) = planted(&db);
    let backends = Backends::mock(Box::new(EchoBackend::new(EchoMode::Context)));
    let opts = EvalOptions {
        retriever: Preset::all()[0].retriever_config(),
        gold_context: true,
        parallelism: 2,
    };
    let out = cmd_eval(&db, &qa, &opts, &backends, &template(), &quick_retry());
    for q in &out.report.questions {
        assert_eq!(q.context_recall, Some(1.0), "{}", q.question_id);
    }
    assert!(out.traces.iter().all(|t| t.gold_context && t.retrieval.is_none()));
}

#[test]
fn empty_question_file_gives_an_empty_report_and_a_warning() {
    let (_fx, db) = indexed_toy();
    let backends = Backends::mock(Box::new(EchoBackend::new(EchoMode::Question)));
    let opts = EvalOptions {
        retriever: Preset::all()[0].retriever_config(),
        gold_context: false,
        parallelism: 2,
    };
    let out = cmd_eval(&db, &[], &opts, &backends, &template(), &quick_retry());
    assert!(out.report.questions.is_empty());
    assert_eq!(out.warnings.len(), 1);
    assert_eq!(out.report.to_ndjson().lines().count(), 1);
}

struct FailsOn(String);

impl ChatBackend for FailsOn {
    fn backend_id(&self) -> &str {
        "fails-on"
    }

    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        if request.question == self.0 {
            Err(BackendError::Status {
                status: 500,
                body: String::new(),
            })
        } else {
            Ok(request.question.to_string())
        }
    }
}

#[test]
fn a_failing_question_is_recorded_and_the_run_continues() {
    let (_fx, db) = indexed_toy();
    let (qa, _) = planted(&db);
    let backends = Backends::mock(Box::new(FailsOn(qa[3].question.clone())));
    let opts = EvalOptions {
        retriever: Preset::all()[0].retriever_config(),
        gold_context: false,
        parallelism: 4,
    };
    let out = cmd_eval(&db, &qa, &opts, &backends, &template(), &quick_retry());
    assert_eq!(out.report.questions.len(), qa.len());
    let failed = &out.report.questions[3];
    assert_eq!(failed.status, QuestionStatus::MissingAnswer);
    assert!(failed.error.is_some());
    let trace = &out.traces[3];
    assert_eq!(trace.failed_stage, Some(Stage::Generate));
    assert_eq!(trace.answer.as_ref().unwrap().attempts, 2);
    assert!(out.report.questions.iter().enumerate().all(|(i, q)| i == 3 || q.error.is_none()));
}

#[test]
fn evaluation_does_not_depend_on_parallelism() {
    let (_fx, db) = indexed_toy();
    let (qa, script) = planted(&db);
    let backends = Backends::mock(Box::new(ScriptedBackend::new(script)));
    let run = |parallelism| {
        let opts = EvalOptions {
            retriever: "paragraph-notau".parse::<Preset>().unwrap().retriever_config(),
            gold_context: false,
            parallelism,
        };
        let out = cmd_eval(&db, &qa, &opts, &backends, &template(), &quick_retry());
        (out.report.to_ndjson(), out.audit_ndjson())
    };
    assert_eq!(run(1), run(8));
}

#[test]
fn audit_records_carry_the_retrieval_fields() {
    let (_fx, db) = indexed_toy();
    let (qa, script) = planted(&db);
    let backends = Backends::mock(Box::new(ScriptedBackend::new(script)));
    let opts = EvalOptions {
        retriever: "mal-tau05".parse::<Preset>().unwrap().retriever_config(),
        gold_context: false,
        parallelism: 2,
    };
    let out = cmd_eval(&db, &qa[..2], &opts, &backends, &template(), &quick_retry());
    for line in out.audit_ndjson().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["question_id", "query", "selected", "total_words", "k_budget_selected", "answer"] {
            assert!(v.get(key).is_some(), "missing {key} in {line}");
        }
    }
}
