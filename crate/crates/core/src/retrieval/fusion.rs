//! Reciprocal rank fusion of the passage and graph rankings.

use std::collections::HashMap;

use super::RankedList;

pub const DEFAULT_RRF_K: usize = 60;

/// Fuses two rankings with `score(d) = sum over lists containing d of
/// 1 / (rrf_k + rank(d))`, ranks 1-based, then keeps the `top_k` best.
pub fn rrf_fuse(list_p: &RankedList, list_g: &RankedList, rrf_k: usize, top_k: usize) -> RankedList {
    let k = rrf_k as f64;
    let mut fused: HashMap<&str, f64> = HashMap::new();
    for list in [list_p, list_g] {
        for (i, id) in list.ids().enumerate() {
            *fused.entry(id).or_insert(0.0) += 1.0 / (k + (i + 1) as f64);
        }
    }
    RankedList::from_scores(fused).truncated(top_k)
}
