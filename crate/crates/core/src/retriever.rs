//! Budgeted retrieval with a softmax cumulative-probability cutoff.
//!
//! The pipeline is: score every chunk in the pool, pack chunks in score order
//! under the word budget, turn the similarities of the packed chunks into
//! softmax probabilities, then keep the longest prefix whose cumulative
//! probability stays within `tau`. The top chunk is always kept.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::database::{ChunkDatabase, ChunkPool, DbError, ScoredChunk};
use crate::embed::Embedder;
use crate::segmenter::ChunkLevel;

pub const DEFAULT_BUDGET_WORDS: usize = 10_000;
pub const DEFAULT_TAU: f64 = 0.5;

/// What to do with a chunk that does not fit the remaining budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Packing {
    /// Skip it and keep scanning down the list.
    #[default]
    Skip,
    /// Stop at the first chunk that does not fit.
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub budget_words: usize,
    pub tau: Option<f64>,
    pub pool: ChunkPool,
    #[serde(default)]
    pub packing: Packing,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            budget_words: DEFAULT_BUDGET_WORDS,
            tau: Some(DEFAULT_TAU),
            pool: ChunkPool::all_levels(),
            packing: Packing::Skip,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.budget_words == 0 {
            return Err(RetrieveError::InvalidConfig("budget must be at least 1 word".into()));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t <= 1.0) {
                return Err(RetrieveError::InvalidConfig(format!("tau {t} is outside (0, 1]")));
            }
        }
        if matches!(&self.pool, ChunkPool::Levels(l) if l.is_empty()) {
            return Err(RetrieveError::InvalidConfig("no chunk levels selected".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrieveError {
    #[error("invalid retriever configuration: {0}")]
    InvalidConfig(String),
    #[error("softmax over an empty selection")]
    EmptySelection,
    #[error(transparent)]
    Database(#[from] DbError),
}

/// A chunk that fits the budget, before probabilities are assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub chunk_id: String,
    pub level: ChunkLevel,
    pub similarity: f64,
    pub words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedChunk {
    pub chunk_id: String,
    pub level: ChunkLevel,
    pub similarity: f64,
    pub probability: f64,
    pub cumulative_probability: f64,
    pub words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub selected: Vec<SelectedChunk>,
    pub total_words: usize,
    /// Number of chunks that survived the budget, before the threshold.
    pub k_budget_selected: usize,
    /// Set when the top chunk alone exceeded `tau` and was kept anyway.
    pub first_chunk_exceeds_tau: bool,
    pub warnings: Vec<String>,
    pub config: RetrieverConfig,
}

/// Packs chunks in score order while their words fit within `budget`.
pub fn select_by_budget(scored: &[ScoredChunk<'_>], budget: usize, packing: Packing) -> Vec<Candidate> {
    let mut remaining = budget;
    let mut out = Vec::new();
    for s in scored {
        if s.chunk.words <= remaining {
            remaining -= s.chunk.words;
            out.push(Candidate {
                chunk_id: s.chunk.chunk_id.clone(),
                level: s.chunk.level,
                similarity: s.similarity,
                words: s.chunk.words,
            });
        } else if packing == Packing::Stop {
            break;
        }
    }
    out
}

/// `exp(s_i) / Σ exp(s_j)` over exactly the given similarities, computed as
/// `exp(s_i - max)` for stability.
pub fn softmax_probabilities(similarities: &[f64]) -> Result<Vec<f64>, RetrieveError> {
    let max = similarities
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if similarities.is_empty() {
        return Err(RetrieveError::EmptySelection);
    }
    let exps: Vec<f64> = similarities.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Length of the kept prefix of `probabilities` (descending) under `tau`.
///
/// With no threshold everything is kept. Otherwise the longest prefix whose
/// cumulative probability is at most `tau`, but never fewer than one item.
pub fn apply_threshold(probabilities: &[f64], tau: Option<f64>) -> usize {
    let Some(tau) = tau else {
        return probabilities.len();
    };
    let mut cumulative = 0.0;
    let mut keep = 0;
    for p in probabilities {
        cumulative += p;
        if cumulative > tau {
            break;
        }
        keep += 1;
    }
    keep.max(probabilities.len().min(1))
}

/// Runs the full retrieval for `query`.
pub fn retrieve(
    query: &str,
    db: &ChunkDatabase,
    embedder: &dyn Embedder,
    cfg: &RetrieverConfig,
) -> Result<RetrievalResult, RetrieveError> {
    cfg.validate()?;
    let scored = db.score_all(query, embedder, &cfg.pool)?;
    Ok(retrieve_scored(query, &scored, cfg))
}

/// Retrieval over an already scored list; everything after scoring.
pub fn retrieve_scored(query: &str, scored: &[ScoredChunk<'_>], cfg: &RetrieverConfig) -> RetrievalResult {
    let candidates = select_by_budget(scored, cfg.budget_words, cfg.packing);
    let mut warnings = Vec::new();
    if candidates.is_empty() {
        warnings.push(if scored.is_empty() {
            "no chunks in the selected pool".to_string()
        } else {
            format!("every chunk exceeds the {}-word budget", cfg.budget_words)
        });
    }
    let sims: Vec<f64> = candidates.iter().map(|c| c.similarity).collect();
    let probabilities = softmax_probabilities(&sims).unwrap_or_default();
    let keep = apply_threshold(&probabilities, cfg.tau);
    let first_chunk_exceeds_tau = matches!((cfg.tau, probabilities.first()), (Some(t), Some(&p)) if p > t);
    if first_chunk_exceeds_tau {
        warnings.push("top chunk probability exceeds tau; kept to avoid an empty context".into());
    }

    let mut cumulative = 0.0;
    let selected: Vec<SelectedChunk> = candidates
        .into_iter()
        .zip(probabilities)
        .take(keep)
        .map(|(c, p)| {
            cumulative += p;
            SelectedChunk {
                chunk_id: c.chunk_id,
                level: c.level,
                similarity: c.similarity,
                probability: p,
                cumulative_probability: cumulative,
                words: c.words,
            }
        })
        .collect();
    RetrievalResult {
        query: query.to_string(),
        total_words: selected.iter().map(|s| s.words).sum(),
        k_budget_selected: sims.len(),
        first_chunk_exceeds_tau,
        selected,
        warnings,
        config: cfg.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{Chunk, Provenance};
    use proptest::prelude::*;

    fn chunk(id: &str, words: usize) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            level: ChunkLevel::Paragraph,
            text: vec!["w"; words].join(" "),
            words,
            provenance: Provenance {
                doc_id: "d".into(),
                section_index: Some(0),
                paragraph_range: Some([0, 0]),
                sentence_range: None,
            },
            is_summary: false,
        }
    }

    fn scored<'a>(chunks: &'a [Chunk], sims: &[f64]) -> Vec<ScoredChunk<'a>> {
        chunks
            .iter()
            .zip(sims)
            .map(|(chunk, &similarity)| ScoredChunk { chunk, similarity })
            .collect()
    }

    #[test]
    fn budget_greedy_skip() {
        let cs = [chunk("a", 400), chunk("b", 300), chunk("c", 500)];
        let s = scored(&cs, &[0.9, 0.8, 0.7]);
        let sel = select_by_budget(&s, 800, Packing::Skip);
        assert_eq!(sel.iter().map(|c| c.chunk_id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(select_by_budget(&s, 10_000, Packing::Skip).len(), 3);
        assert!(select_by_budget(&s, 100, Packing::Skip).is_empty());
    }

    #[test]
    fn budget_skip_versus_stop() {
        let cs = [chunk("a", 400), chunk("b", 500), chunk("c", 300)];
        let s = scored(&cs, &[0.9, 0.8, 0.7]);
        assert_eq!(select_by_budget(&s, 800, Packing::Skip).len(), 2);
        assert_eq!(select_by_budget(&s, 800, Packing::Stop).len(), 1);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_probabilities(&[0.9, 0.9]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax_probabilities(&[0.3]).unwrap(), vec![1.0]);
        let p = softmax_probabilities(&[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.731059).abs() < 1e-6);
        assert_eq!(softmax_probabilities(&[]), Err(RetrieveError::EmptySelection));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(apply_threshold(&[0.4, 0.3, 0.2, 0.1], Some(0.5)), 1);
        assert_eq!(apply_threshold(&[0.6, 0.4], Some(0.5)), 1);
        assert_eq!(apply_threshold(&[0.4, 0.3, 0.2, 0.1], None), 4);
        assert_eq!(apply_threshold(&[0.25, 0.25, 0.5], Some(0.5)), 2);
        assert_eq!(apply_threshold(&[], Some(0.5)), 0);
    }

    #[test]
    fn result_flags_forced_first_chunk() {
        let cs = [chunk("a", 1), chunk("b", 1)];
        let s = scored(&cs, &[1.0, -1.0]);
        let r = retrieve_scored("q", &s, &RetrieverConfig::default());
        assert_eq!(r.selected.len(), 1);
        assert!(r.first_chunk_exceeds_tau);
        assert_eq!(r.k_budget_selected, 2);
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn empty_budget_selection_warns() {
        let cs = [chunk("a", 50)];
        let s = scored(&cs, &[0.5]);
        let cfg = RetrieverConfig {
            budget_words: 10,
            ..RetrieverConfig::default()
        };
        let r = retrieve_scored("q", &s, &cfg);
        assert!(r.selected.is_empty());
        assert_eq!(r.total_words, 0);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn config_validation() {
        let mut cfg = RetrieverConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.tau = Some(0.0);
        assert!(cfg.validate().is_err());
        cfg.tau = Some(1.0);
        assert!(cfg.validate().is_ok());
        cfg.budget_words = 0;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(sims in prop::collection::vec(-1f64..1.0, 1..50), shift in -50f64..50.0) {
            let a = softmax_probabilities(&sims).unwrap();
            let shifted: Vec<f64> = sims.iter().map(|s| s + shift).collect();
            let b = softmax_probabilities(&shifted).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn threshold_monotone(mut raw in prop::collection::vec(0.001f64..1.0, 1..20), t1 in 0.01f64..1.0, t2 in 0.01f64..1.0) {
            raw.sort_by(|a, b| b.total_cmp(a));
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(apply_threshold(&probs, Some(lo)) <= apply_threshold(&probs, Some(hi)));
            prop_assert!(apply_threshold(&probs, Some(hi)) <= apply_threshold(&probs, None));
        }

        #[test]
        fn budget_never_exceeded(words in prop::collection::vec(1usize..500, 0..30), budget in 1usize..3000) {
            let cs: Vec<Chunk> = words.iter().enumerate().map(|(i, &w)| chunk(&format!("c{i}"), w)).collect();
            let sims: Vec<f64> = (0..cs.len()).map(|i| 1.0 - i as f64 / 100.0).collect();
            let s = scored(&cs, &sims);
            let r = retrieve_scored("q", &s, &RetrieverConfig { budget_words: budget, tau: None, ..RetrieverConfig::default() });
            prop_assert!(r.total_words <= budget);
            if words.iter().any(|&w| w <= budget) {
                prop_assert!(!r.selected.is_empty());
            }
        }
    }
}
