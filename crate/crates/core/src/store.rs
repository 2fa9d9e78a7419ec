//! On-disk chunk store.
//!
//! A store is a directory that is only ever appended to:
//!
//! | file              | contents                                              |
//! |-------------------|-------------------------------------------------------|
//! | `progress.json`   | corpus and config hashes of the build in progress     |
//! | `chunks.jsonl`    | one chunk record per line, all four levels            |
//! | `baseline.jsonl`  | vanilla baseline chunk records                        |
//! | `summaries.jsonl` | one record per filled summary chunk                   |
//! | `vectors.malv`    | binary vectors, see [`crate::embed`]                  |
//! | `manifest.json`   | written last; its presence marks the store finalized  |

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::database::{rounded_average, ChunkDatabase, DbError, LevelStats};
use crate::embed::VectorStore;
use crate::segmenter::{Chunk, ChunkLevel};
use crate::summarizer::SummaryRecord;

pub const STORE_FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROGRESS_FILE: &str = "progress.json";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const BASELINE_FILE: &str = "baseline.jsonl";
pub const SUMMARIES_FILE: &str = "summaries.jsonl";
pub const VECTORS_FILE: &str = "vectors.malv";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },
    #[error("store {0} is not finalized")]
    NotFinalized(PathBuf),
    #[error("store manifest disagrees with its records: {0}")]
    Inconsistent(String),
    #[error("store {0} was built from a different corpus or configuration")]
    Mismatch(PathBuf),
    #[error(transparent)]
    Database(#[from] DbError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Build identity: what the store was computed from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildKey {
    pub corpus_hash: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub count: usize,
    pub avg_words: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub corpus_hash: String,
    pub config_hash: String,
    pub extractor_backend: String,
    pub embedder_backend: String,
    pub dimension: usize,
    /// Four rows, document level first.
    pub levels: Vec<LevelStats>,
    pub baseline: PopulationStats,
    pub chunk_records: usize,
    pub summary_records: usize,
    pub vector_records: usize,
}

impl Manifest {
    pub fn describe(db: &ChunkDatabase, key: &BuildKey, extractor_backend: &str) -> Result<Self, DbError> {
        let vectors = db.vectors().ok_or(DbError::MissingVectors {
            missing: db.record_count(),
        })?;
        let baseline_words: usize = db.baseline().iter().map(|c| c.words).sum();
        Ok(Manifest {
            version: STORE_FORMAT_VERSION,
            corpus_hash: key.corpus_hash.clone(),
            config_hash: key.config_hash.clone(),
            extractor_backend: extractor_backend.to_string(),
            embedder_backend: vectors.backend_id.clone(),
            dimension: vectors.dimension,
            levels: db.level_stats().to_vec(),
            baseline: PopulationStats {
                count: db.baseline().len(),
                avg_words: rounded_average(baseline_words, db.baseline().len()),
            },
            chunk_records: db.chunks().len(),
            summary_records: db.summaries().len(),
            vector_records: vectors.len(),
        })
    }

    pub fn key(&self) -> BuildKey {
        BuildKey {
            corpus_hash: self.corpus_hash.clone(),
            config_hash: self.config_hash.clone(),
        }
    }

    pub fn level(&self, level: ChunkLevel) -> Option<&LevelStats> {
        self.levels.iter().find(|l| l.level == level)
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_err(&tmp)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(&tmp))?;
    }
    w.flush().map_err(io_err(&tmp))?;
    drop(w);
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Record {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Handle on a store directory.
#[derive(Debug, Clone)]
pub struct ChunkStore {
    dir: PathBuf,
}

impl ChunkStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ChunkStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn is_finalized(&self) -> bool {
        self.path(MANIFEST_FILE).exists()
    }

    pub fn manifest(&self) -> Result<Manifest, StoreError> {
        if !self.is_finalized() {
            return Err(StoreError::NotFinalized(self.dir.clone()));
        }
        read_json(&self.path(MANIFEST_FILE))
    }

    pub fn progress(&self) -> Result<Option<BuildKey>, StoreError> {
        let p = self.path(PROGRESS_FILE);
        if !p.exists() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }

    pub fn begin(&self, key: &BuildKey) -> Result<(), StoreError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        write_json(&self.path(PROGRESS_FILE), key)
    }

    /// Persists chunks and summary records; vectors are written separately.
    pub fn save_records(&self, db: &ChunkDatabase) -> Result<(), StoreError> {
        write_jsonl(&self.path(CHUNKS_FILE), db.chunks())?;
        write_jsonl(&self.path(BASELINE_FILE), db.baseline())?;
        write_jsonl(&self.path(SUMMARIES_FILE), db.summaries())
    }

    pub fn save_vectors(&self, db: &ChunkDatabase) -> Result<(), StoreError> {
        let Some(vectors) = db.vectors() else {
            return Ok(());
        };
        let path = self.path(VECTORS_FILE);
        let tmp = path.with_extension("tmp");
        let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(file);
        vectors.write_to(&mut w).map_err(io_err(&tmp))?;
        w.flush().map_err(io_err(&tmp))?;
        drop(w);
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Writes the manifest, sealing the store.
    pub fn finalize(&self, manifest: &Manifest) -> Result<(), StoreError> {
        write_json(&self.path(MANIFEST_FILE), manifest)
    }

    /// Loads whatever records exist, for resuming an interrupted build.
    pub fn load_partial(&self) -> Result<Option<ChunkDatabase>, StoreError> {
        if !self.path(CHUNKS_FILE).exists() || !self.path(BASELINE_FILE).exists() {
            return Ok(None);
        }
        let mut db = self.load_records()?;
        let vectors = self.path(VECTORS_FILE);
        if vectors.exists() {
            let file = fs::File::open(&vectors).map_err(io_err(&vectors))?;
            let store = VectorStore::read_from(io::BufReader::new(file)).map_err(io_err(&vectors))?;
            db.set_vectors(store)?;
        }
        Ok(Some(db))
    }

    fn load_records(&self) -> Result<ChunkDatabase, StoreError> {
        let chunks: Vec<Chunk> = read_jsonl(&self.path(CHUNKS_FILE))?;
        let baseline: Vec<Chunk> = read_jsonl(&self.path(BASELINE_FILE))?;
        let summaries: Vec<SummaryRecord> = if self.path(SUMMARIES_FILE).exists() {
            read_jsonl(&self.path(SUMMARIES_FILE))?
        } else {
            Vec::new()
        };
        let mut db = ChunkDatabase::new(chunks, baseline)?;
        db.add_summaries(summaries);
        Ok(db)
    }

    /// Opens a finalized store and checks it against its manifest.
    pub fn open(&self) -> Result<(Manifest, ChunkDatabase), StoreError> {
        let manifest = self.manifest()?;
        let mut db = self
            .load_partial()?
            .ok_or_else(|| StoreError::Inconsistent("chunk records are missing".into()))?;
        let actual = Manifest::describe(&db, &manifest.key(), &manifest.extractor_backend)?;
        if actual != manifest {
            return Err(StoreError::Inconsistent(format!(
                "manifest records {} chunks / {} vectors, found {} / {}",
                manifest.chunk_records, manifest.vector_records, actual.chunk_records, actual.vector_records
            )));
        }
        db.finalize()?;
        Ok((manifest, db))
    }
}
