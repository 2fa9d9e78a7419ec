//! Pipeline configuration, backend construction and the experiment presets.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{
    parse_icl_examples, ChatBackend, EchoBackend, EchoMode, HttpChatBackend, PromptTemplate, RetryPolicy,
    ScriptedBackend, DEFAULT_TEMPLATE,
};
use crate::backend::{HttpClient, HttpSettings, EMBED_TOKEN_ENV, LLM_TOKEN_ENV};
use crate::database::ChunkPool;
use crate::embed::{Embedder, HashingEmbedder, HttpEmbedder};
use crate::evaluator::{ExactJudge, HttpJudge, StatementJudge};
use crate::retriever::{Packing, RetrieverConfig, DEFAULT_BUDGET_WORDS, DEFAULT_TAU};
use crate::segmenter::{ChunkLevel, SegmenterConfig};
use crate::sentence::{AbbreviationList, SentenceSplitter};
use crate::summarizer::{Extractor, HttpExtractor, MockExtractor, SummaryPrompts};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExtractorSpec {
    Mock {
        #[serde(default = "default_mock_words")]
        max_words: usize,
    },
    Http {
        #[serde(flatten)]
        http: HttpSettings,
        /// Directory holding `paragraph.txt`, `section.txt`, `document.txt`.
        #[serde(default)]
        prompts_dir: Option<PathBuf>,
    },
}

fn default_mock_words() -> usize {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    Hashing {
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Http {
        #[serde(flatten)]
        http: HttpSettings,
        dimension: usize,
    },
}

fn default_dimension() -> usize {
    HashingEmbedder::DEFAULT_DIMENSION
}

fn default_seed() -> u64 {
    HashingEmbedder::DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChatSpec {
    EchoQuestion,
    EchoContext,
    Scripted { transcript: PathBuf },
    Http {
        #[serde(flatten)]
        http: HttpSettings,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JudgeSpec {
    Exact,
    Http {
        #[serde(flatten)]
        http: HttpSettings,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpecs {
    #[serde(default = "default_extractor")]
    pub extractor: ExtractorSpec,
    #[serde(default = "default_embedder")]
    pub embedder: EmbedderSpec,
    #[serde(default = "default_chat")]
    pub chat: ChatSpec,
    #[serde(default = "default_judge")]
    pub judge: JudgeSpec,
}

fn default_extractor() -> ExtractorSpec {
    ExtractorSpec::Mock {
        max_words: default_mock_words(),
    }
}

fn default_embedder() -> EmbedderSpec {
    EmbedderSpec::Hashing {
        dimension: default_dimension(),
        seed: default_seed(),
    }
}

fn default_chat() -> ChatSpec {
    ChatSpec::EchoContext
}

fn default_judge() -> JudgeSpec {
    JudgeSpec::Exact
}

impl Default for BackendSpecs {
    fn default() -> Self {
        BackendSpecs {
            extractor: default_extractor(),
            embedder: default_embedder(),
            chat: default_chat(),
            judge: default_judge(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverSettings {
    pub budget: usize,
    pub tau: f64,
    pub use_tau: bool,
    pub levels: String,
    pub packing: Packing,
}

impl Default for RetrieverSettings {
    fn default() -> Self {
        RetrieverSettings {
            budget: DEFAULT_BUDGET_WORDS,
            tau: DEFAULT_TAU,
            use_tau: true,
            levels: "all".into(),
            packing: Packing::Skip,
        }
    }
}

impl RetrieverSettings {
    pub fn to_config(&self) -> Result<RetrieverConfig, ConfigError> {
        let cfg = RetrieverConfig {
            budget_words: self.budget,
            tau: self.use_tau.then_some(self.tau),
            pool: parse_levels(&self.levels)?,
            packing: self.packing,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub template: Option<PathBuf>,
    pub icl_examples: Option<PathBuf>,
    pub retry_attempts: usize,
    pub retry_base_delay_ms: u64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            template: None,
            icl_examples: None,
            retry_attempts: 3,
            retry_base_delay_ms: 500,
        }
    }
}

/// Everything a pipeline run needs, usually loaded from a TOML file.
/// Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default = "default_store")]
    pub store: PathBuf,
    #[serde(default)]
    pub segmenter: SegmenterConfig,
    #[serde(default)]
    pub abbreviations: Option<PathBuf>,
    #[serde(default)]
    pub retriever: RetrieverSettings,
    #[serde(default)]
    pub generation: GenerationSettings,
    #[serde(default)]
    pub backends: BackendSpecs,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_store() -> PathBuf {
    PathBuf::from("malrag-store")
}

fn default_parallelism() -> usize {
    4
}

fn default_batch_size() -> usize {
    32
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            store: default_store(),
            segmenter: SegmenterConfig::default(),
            abbreviations: None,
            retriever: RetrieverSettings::default(),
            generation: GenerationSettings::default(),
            backends: BackendSpecs::default(),
            parallelism: default_parallelism(),
            batch_size: default_batch_size(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.corpus.as_mut() {
            fix(p);
        }
        fix(&mut self.store);
        for p in [
            self.abbreviations.as_mut(),
            self.generation.template.as_mut(),
            self.generation.icl_examples.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let ExtractorSpec::Http {
            prompts_dir: Some(p), ..
        } = &mut self.backends.extractor
        {
            fix(p);
        }
        if let ChatSpec::Scripted { transcript } = &mut self.backends.chat {
            fix(transcript);
        }
    }

    /// Checks value ranges and that every referenced file exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.segmenter.validate().map_err(ConfigError::Invalid)?;
        self.retriever.to_config()?;
        if self.batch_size == 0 || self.parallelism == 0 {
            return Err(ConfigError::Invalid("batch_size and parallelism must be positive".into()));
        }
        let mut files: Vec<&Path> = [
            self.abbreviations.as_deref(),
            self.generation.template.as_deref(),
            self.generation.icl_examples.as_deref(),
        ]
        .into_iter()
        .flatten()
        .collect();
        if let ChatSpec::Scripted { transcript } = &self.backends.chat {
            files.push(transcript);
        }
        if let ExtractorSpec::Http {
            prompts_dir: Some(dir), ..
        } = &self.backends.extractor
        {
            files.push(dir);
        }
        for f in files {
            if !f.exists() {
                return Err(ConfigError::Invalid(format!("referenced file {} does not exist", f.display())));
            }
        }
        match &self.backends.embedder {
            EmbedderSpec::Hashing { dimension: 0, .. } | EmbedderSpec::Http { dimension: 0, .. } => {
                Err(ConfigError::Invalid("embedding dimension must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn splitter(&self) -> Result<SentenceSplitter, ConfigError> {
        Ok(match &self.abbreviations {
            Some(path) => SentenceSplitter::new(AbbreviationList::parse(&read(path)?)),
            None => SentenceSplitter::default(),
        })
    }

    pub fn template(&self) -> Result<PromptTemplate, ConfigError> {
        let text = match &self.generation.template {
            Some(p) => read(p)?,
            None => DEFAULT_TEMPLATE.to_string(),
        };
        let examples = match &self.generation.icl_examples {
            Some(p) => parse_icl_examples(&read(p)?).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            None => Vec::new(),
        };
        PromptTemplate::new(text, examples).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.generation.retry_attempts.max(1),
            base_delay: Duration::from_millis(self.generation.retry_base_delay_ms),
        }
    }

    pub fn backends(&self) -> Result<Backends, ConfigError> {
        Backends::from_specs(&self.backends)
    }
}

/// Constructed backends for a run.
pub struct Backends {
    pub extractor: Box<dyn Extractor>,
    pub embedder: Box<dyn Embedder>,
    pub chat: Box<dyn ChatBackend>,
    pub judge: Box<dyn StatementJudge>,
}

impl Backends {
    /// Deterministic offline backends: extractive summaries, hashed
    /// bag-of-words embeddings, the given chat backend and exact matching.
    pub fn mock(chat: Box<dyn ChatBackend>) -> Self {
        Backends {
            extractor: Box::new(MockExtractor::default()),
            embedder: Box::new(HashingEmbedder::default()),
            chat,
            judge: Box::new(ExactJudge),
        }
    }

    pub fn from_specs(specs: &BackendSpecs) -> Result<Self, ConfigError> {
        let extractor: Box<dyn Extractor> = match &specs.extractor {
            ExtractorSpec::Mock { max_words } => Box::new(MockExtractor { max_words: *max_words }),
            ExtractorSpec::Http { http, prompts_dir } => {
                let prompts = match prompts_dir {
                    Some(dir) => SummaryPrompts::load_dir(dir).map_err(ConfigError::Invalid)?,
                    None => SummaryPrompts::default(),
                };
                Box::new(HttpExtractor::new(HttpClient::from_env(http.clone(), LLM_TOKEN_ENV), prompts))
            }
        };
        let embedder: Box<dyn Embedder> = match &specs.embedder {
            EmbedderSpec::Hashing { dimension, seed } => Box::new(HashingEmbedder::new(*dimension, *seed)),
            EmbedderSpec::Http { http, dimension } => Box::new(HttpEmbedder::new(
                HttpClient::from_env(http.clone(), EMBED_TOKEN_ENV),
                *dimension,
            )),
        };
        let chat: Box<dyn ChatBackend> = match &specs.chat {
            ChatSpec::EchoQuestion => Box::new(EchoBackend::new(EchoMode::Question)),
            ChatSpec::EchoContext => Box::new(EchoBackend::new(EchoMode::Context)),
            ChatSpec::Scripted { transcript } => {
                Box::new(ScriptedBackend::parse(&read(transcript)?).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
            ChatSpec::Http { http } => Box::new(HttpChatBackend::new(HttpClient::from_env(http.clone(), LLM_TOKEN_ENV))),
        };
        let judge: Box<dyn StatementJudge> = match &specs.judge {
            JudgeSpec::Exact => Box::new(ExactJudge),
            JudgeSpec::Http { http } => Box::new(HttpJudge::new(HttpClient::from_env(http.clone(), LLM_TOKEN_ENV))),
        };
        Ok(Backends {
            extractor,
            embedder,
            chat,
            judge,
        })
    }
}

/// Parses `all`, `vanilla`, or a comma-separated list of levels.
pub fn parse_levels(s: &str) -> Result<ChunkPool, ConfigError> {
    match s.trim() {
        "all" => Ok(ChunkPool::all_levels()),
        "vanilla" => Ok(ChunkPool::Vanilla),
        list => {
            let levels = list
                .split(',')
                .map(|l| l.trim().parse::<ChunkLevel>().map_err(ConfigError::Invalid))
                .collect::<Result<BTreeSet<_>, _>>()?;
            if levels.is_empty() {
                return Err(ConfigError::Invalid("empty level list".into()));
            }
            Ok(ChunkPool::Levels(levels))
        }
    }
}

/// Retrieval source of a preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetSource {
    Vanilla,
    Level(ChunkLevel),
    Mal,
}

/// One cell of the comparison grid: a retrieval source with or without the
/// cumulative-probability threshold, at the default 10,000-word budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub source: PresetSource,
    pub tau: bool,
}

impl Preset {
    pub const SOURCES: [PresetSource; 6] = [
        PresetSource::Vanilla,
        PresetSource::Level(ChunkLevel::Document),
        PresetSource::Level(ChunkLevel::Section),
        PresetSource::Level(ChunkLevel::Paragraph),
        PresetSource::Level(ChunkLevel::MultiSentence),
        PresetSource::Mal,
    ];

    pub fn all() -> Vec<Preset> {
        Self::SOURCES
            .iter()
            .flat_map(|&source| [true, false].map(|tau| Preset { source, tau }))
            .collect()
    }

    pub fn retriever_config(&self) -> RetrieverConfig {
        RetrieverConfig {
            budget_words: DEFAULT_BUDGET_WORDS,
            tau: self.tau.then_some(DEFAULT_TAU),
            pool: match self.source {
                PresetSource::Vanilla => ChunkPool::Vanilla,
                PresetSource::Level(l) => ChunkPool::level(l),
                PresetSource::Mal => ChunkPool::all_levels(),
            },
            packing: Packing::Skip,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let source = match self.source {
            PresetSource::Vanilla => "vanilla",
            PresetSource::Level(ChunkLevel::Document) => "document",
            PresetSource::Level(ChunkLevel::Section) => "section",
            PresetSource::Level(ChunkLevel::Paragraph) => "paragraph",
            PresetSource::Level(ChunkLevel::MultiSentence) => "multi",
            PresetSource::Mal => "mal",
        };
        write!(f, "{source}-{}", if self.tau { "tau05" } else { "notau" })
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::all()
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "unknown preset `{s}`; expected one of {}",
                    Preset::all().iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", ")
                ))
            })
    }
}
