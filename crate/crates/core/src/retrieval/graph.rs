//! Graph retrieval: seed linking, personalized PageRank, passage ranking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dense::{dense_retrieve, dot};
use super::ppr::{personalized_pagerank_nodes, PprParams};
use super::{RankedList, RetrievalError};
use crate::corpus::{canonical_entity, CorpusStore, NodeKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedLinking {
    /// Number of entities (and facts) taken by similarity.
    pub n_seed: usize,
    /// Similarities at or below this value never seed.
    pub similarity_floor: f64,
}

impl Default for SeedLinking {
    fn default() -> Self {
        Self {
            n_seed: 5,
            similarity_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphRetrieval {
    pub ranked: RankedList,
    /// Entity seeds with their teleport weights (before normalization).
    pub seeds: BTreeMap<String, f64>,
    /// No seed could be linked, so `ranked` came from dense retrieval.
    pub fallback_to_dense: bool,
    pub ppr_iterations: usize,
    pub ppr_converged: bool,
}

fn top_by_similarity<'a, I>(items: I, linking: &SeedLinking) -> Vec<(&'a str, f64, usize)>
where
    I: IntoIterator<Item = (&'a str, f64, usize)>,
{
    let mut scored: Vec<_> = items
        .into_iter()
        .filter(|(_, sim, _)| *sim > linking.similarity_floor && *sim > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.2.cmp(&b.2)));
    scored.truncate(linking.n_seed);
    scored
}

/// True when `needle` occurs in `haystack` delimited by non-alphanumerics.
fn contains_phrase(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    haystack.match_indices(needle).any(|(start, _)| {
        let end = start + needle.len();
        let before = haystack[..start].chars().next_back();
        let after = haystack[end..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// Maps a query to weighted entity seeds.
///
/// The top `n_seed` entities by similarity seed with their similarity. When
/// fact vectors exist, each of the top `n_seed` facts also seeds its subject
/// and object with the fact's similarity (an entity keeps its largest
/// weight). Entities named verbatim in the query are always included, with the
/// largest similarity weight (1.0 if nothing was linked by similarity).
pub fn link_seeds(
    store: &CorpusStore,
    query: &[f64],
    query_text: &str,
    linking: &SeedLinking,
) -> Result<BTreeMap<String, f64>, RetrievalError> {
    let graph = store.graph().ok_or(RetrievalError::GraphUnavailable)?;
    let has_vectors = !store.entity_vectors().is_empty() || !store.fact_vectors().is_empty();
    if has_vectors && query.len() != store.dimension() {
        return Err(RetrievalError::DimensionMismatch {
            expected: store.dimension(),
            found: query.len(),
        });
    }

    let mut seeds: BTreeMap<String, f64> = BTreeMap::new();
    let bump = |seeds: &mut BTreeMap<String, f64>, entity: &str, w: f64| {
        let slot = seeds.entry(entity.to_string()).or_insert(w);
        if w > *slot {
            *slot = w;
        }
    };

    let entities = store
        .entity_vectors()
        .iter()
        .filter(|(name, _)| graph.entity_nodes.contains(*name))
        .enumerate()
        .map(|(i, (name, v))| (name.as_str(), dot(query, v), i));
    for (name, sim, _) in top_by_similarity(entities, linking) {
        bump(&mut seeds, name, sim);
    }

    let facts = store
        .fact_vectors()
        .iter()
        .enumerate()
        .map(|(i, f)| (f.subject.as_str(), dot(query, &f.vector), i));
    for (_, sim, i) in top_by_similarity(facts, linking) {
        let fact = &store.fact_vectors()[i];
        for endpoint in [&fact.subject, &fact.object] {
            if graph.entity_nodes.contains(endpoint) {
                bump(&mut seeds, endpoint, sim);
            }
        }
    }

    let max_sim = seeds.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let forced_weight = if max_sim.is_finite() { max_sim } else { 1.0 };
    let text = canonical_entity(query_text);
    for entity in &graph.entity_nodes {
        if contains_phrase(&text, entity) {
            seeds.insert(entity.clone(), forced_weight);
        }
    }
    Ok(seeds)
}

/// Ranks passages by the PageRank mass on their nodes. Passages with zero
/// mass are left out. Falls back to dense retrieval when no seed links.
pub fn graph_retrieve(
    store: &CorpusStore,
    query: &[f64],
    query_text: &str,
    top_k: usize,
    params: &PprParams,
    linking: &SeedLinking,
) -> Result<GraphRetrieval, RetrievalError> {
    if top_k == 0 {
        return Err(RetrievalError::InvalidTopK);
    }
    let compiled = match (store.graph(), store.compiled_graph()) {
        (Some(g), Some(c)) if !g.entity_nodes.is_empty() => c,
        _ => return Err(RetrievalError::GraphUnavailable),
    };
    let seeds = link_seeds(store, query, query_text, linking)?;
    if seeds.is_empty() {
        return Ok(GraphRetrieval {
            ranked: dense_retrieve(store, query, top_k)?,
            seeds,
            fallback_to_dense: true,
            ppr_iterations: 0,
            ppr_converged: true,
        });
    }

    let node_seeds = seeds
        .iter()
        .map(|(e, &w)| (NodeKey::Entity(e.clone()), w))
        .collect();
    let result = personalized_pagerank_nodes(compiled, &node_seeds, params)?;
    let passages = result.scores.into_iter().filter_map(|(key, score)| match key {
        NodeKey::Passage(id) if score > 0.0 => Some((id, score)),
        _ => None,
    });
    Ok(GraphRetrieval {
        ranked: RankedList::from_scores(passages).truncated(top_k),
        seeds,
        fallback_to_dense: false,
        ppr_iterations: result.iterations,
        ppr_converged: result.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phrase_matching_respects_word_boundaries() {
        assert!(contains_phrase("who is dave koz?", "dave koz"));
        assert!(contains_phrase("dave koz", "dave koz"));
        assert!(!contains_phrase("davekoz fans", "dave koz"));
        assert!(!contains_phrase("a banana", "nan"));
        assert!(contains_phrase("nan and banana", "nan"));
        assert!(!contains_phrase("anything", ""));
    }
}
