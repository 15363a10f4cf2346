use super::{RankedList, RetrievalError};
use crate::corpus::CorpusStore;

/// Exhaustive inner-product scoring of every passage vector. On unit vectors
/// the score is the cosine similarity.
pub fn dense_retrieve(
    store: &CorpusStore,
    query: &[f64],
    top_k: usize,
) -> Result<RankedList, RetrievalError> {
    if top_k == 0 {
        return Err(RetrievalError::InvalidTopK);
    }
    if query.len() != store.dimension() && !store.passages().is_empty() {
        return Err(RetrievalError::DimensionMismatch {
            expected: store.dimension(),
            found: query.len(),
        });
    }
    let scored = store
        .passage_vectors()
        .map(|(p, v)| (p.id.as_str(), dot(query, v)));
    Ok(RankedList::from_scores(scored).truncated(top_k))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
