//! The three retrieval modes behind a single mode-dispatched entry point.

mod dense;
mod fusion;
mod graph;
pub mod ppr;

use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, AddAssign};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusStore;
use crate::embedding::{EmbeddingError, EmbeddingProvider};
use crate::reward::UnitCosts;

pub use dense::dense_retrieve;
pub use fusion::{rrf_fuse, DEFAULT_RRF_K};
pub use graph::{graph_retrieve, link_seeds, GraphRetrieval, SeedLinking};
pub use ppr::{personalized_pagerank, personalized_pagerank_nodes, NodeScores, PprOutcome, PprParams, TransitionGraph};

/// Passages returned per retrieval call unless overridden.
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query vector has dimension {found}, store has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("seed node {node} is not in the graph")]
    UnknownSeedNode { node: String },
    #[error("invalid seeds: {0}")]
    InvalidSeeds(String),
    #[error("invalid PageRank parameters: {0}")]
    InvalidParams(String),
    #[error("top_k must be positive")]
    InvalidTopK,
    #[error("no knowledge graph is loaded")]
    GraphUnavailable,
    #[error(transparent)]
    EmbeddingProvider(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    Passage,
    Graph,
    Hybrid,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 3] = [Self::Passage, Self::Graph, Self::Hybrid];
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Passage => "Passage",
            Self::Graph => "Graph",
            Self::Hybrid => "Hybrid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage_id: String,
    pub score: f64,
}

/// Passages ordered by descending score, ties by ascending id, no duplicates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedList {
    entries: Vec<ScoredPassage>,
}

impl RankedList {
    /// Sorts arbitrary `(id, score)` pairs into a ranked list. A repeated id
    /// keeps its highest score.
    pub fn from_scores<I, S>(scores: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut entries: Vec<ScoredPassage> = scores
            .into_iter()
            .map(|(id, score)| ScoredPassage {
                passage_id: id.into(),
                score,
            })
            .collect();
        entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.passage_id.cmp(&b.passage_id))
        });
        let mut seen = HashSet::with_capacity(entries.len());
        entries.retain(|e| seen.insert(e.passage_id.clone()));
        Self { entries }
    }

    pub fn entries(&self) -> &[ScoredPassage] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.passage_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, top_k: usize) {
        self.entries.truncate(top_k);
    }

    pub fn truncated(mut self, top_k: usize) -> Self {
        self.truncate(top_k);
        self
    }

    /// 1-based rank of `id`, if present.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.passage_id == id)
            .map(|i| i + 1)
    }
}

/// Cost of one or more retrieval calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalCost {
    pub wall_seconds: f64,
    pub unit_cost: f64,
}

impl Add for RetrievalCost {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            wall_seconds: self.wall_seconds + rhs.wall_seconds,
            unit_cost: self.unit_cost + rhs.unit_cost,
        }
    }
}

impl AddAssign for RetrievalCost {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub top_k: usize,
    pub rrf_k: usize,
    pub ppr: PprParams,
    pub seed_linking: SeedLinking,
    pub unit_costs: UnitCosts,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            rrf_k: DEFAULT_RRF_K,
            ppr: PprParams::default(),
            seed_linking: SeedLinking::default(),
            unit_costs: UnitCosts::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOutcome {
    pub ranked: RankedList,
    pub cost: RetrievalCost,
    /// Graph retrieval found no seeds and fell back to dense retrieval.
    pub fallback_to_dense: bool,
}

/// Mode-dispatching retriever over an immutable store. Safe to share across
/// threads; each call keeps its own PageRank state.
#[derive(Clone)]
pub struct Retriever {
    store: Arc<CorpusStore>,
    embedder: Arc<dyn EmbeddingProvider>,
    config: RetrieverConfig,
}

impl Retriever {
    pub fn new(
        store: Arc<CorpusStore>,
        embedder: Arc<dyn EmbeddingProvider>,
        config: RetrieverConfig,
    ) -> Self {
        Self {
            store,
            embedder,
            config,
        }
    }

    pub fn store(&self) -> &CorpusStore {
        &self.store
    }

    pub fn config(&self) -> &RetrieverConfig {
        &self.config
    }

    pub fn retrieve(
        &self,
        query_text: &str,
        mode: RetrievalMode,
        top_k: usize,
    ) -> Result<RetrievalOutcome, RetrievalError> {
        if top_k == 0 {
            return Err(RetrievalError::InvalidTopK);
        }
        if mode != RetrievalMode::Passage && self.store.compiled_graph().is_none() {
            return Err(RetrievalError::GraphUnavailable);
        }
        let started = Instant::now();
        let mut query = self.embedder.embed_one(query_text)?;
        if !crate::corpus::normalize_in_place(&mut query) {
            return Err(EmbeddingError::Malformed("zero query vector".into()).into());
        }

        let (ranked, fallback_to_dense) = match mode {
            RetrievalMode::Passage => (dense_retrieve(&self.store, &query, top_k)?, false),
            RetrievalMode::Graph => {
                let g = self.graph(&query, query_text, top_k)?;
                (g.ranked, g.fallback_to_dense)
            }
            RetrievalMode::Hybrid => {
                let all = self.store.passages().len().max(1);
                let dense = dense_retrieve(&self.store, &query, all)?;
                let g = self.graph(&query, query_text, all)?;
                (
                    rrf_fuse(&dense, &g.ranked, self.config.rrf_k, top_k),
                    g.fallback_to_dense,
                )
            }
        };

        Ok(RetrievalOutcome {
            ranked,
            cost: RetrievalCost {
                wall_seconds: started.elapsed().as_secs_f64(),
                unit_cost: self.config.unit_costs.for_mode(mode),
            },
            fallback_to_dense,
        })
    }

    fn graph(
        &self,
        query: &[f64],
        query_text: &str,
        top_k: usize,
    ) -> Result<GraphRetrieval, RetrievalError> {
        graph_retrieve(
            &self.store,
            query,
            query_text,
            top_k,
            &self.config.ppr,
            &self.config.seed_linking,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranked_list_orders_and_dedups() {
        let list = RankedList::from_scores([("b", 0.5), ("a", 0.5), ("c", 0.9), ("a", 0.1)]);
        let ids: Vec<_> = list.ids().collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(list.entries()[1].score, 0.5);
        assert_eq!(list.rank_of("b"), Some(3));
        assert_eq!(list.rank_of("z"), None);
    }

    #[test]
    fn costs_add() {
        let mut c = RetrievalCost {
            wall_seconds: 0.5,
            unit_cost: 1.0,
        };
        c += RetrievalCost {
            wall_seconds: 0.25,
            unit_cost: 3.0,
        };
        assert_eq!(c.unit_cost, 4.0);
        assert_eq!(c.wall_seconds, 0.75);
    }
}
