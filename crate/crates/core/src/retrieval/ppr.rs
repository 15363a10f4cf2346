//! Personalized PageRank by power iteration.
//!
//! Solves `s = (1 - d) p + d W s` where `p` is the normalized seed
//! distribution and `W` the out-degree-normalized transition operator. Mass
//! that reaches a node without outgoing edges teleports back to `p`, so the
//! iterate stays a probability distribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::corpus::{CompiledGraph, NodeKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PprParams {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PprParams {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

impl PprParams {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(RetrievalError::InvalidParams(format!(
                "damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(RetrievalError::InvalidParams(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(RetrievalError::InvalidParams(
                "max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Row-normalized adjacency: `out[u]` lists `(v, P(u -> v))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGraph {
    out: Vec<Vec<(usize, f64)>>,
}

impl TransitionGraph {
    /// Builds the operator from weighted directed edges. Parallel edges are
    /// summed; non-positive weights are dropped.
    pub fn from_directed_edges<I>(node_count: usize, edges: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); node_count];
        for (u, v, w) in edges {
            assert!(u < node_count && v < node_count, "edge ({u}, {v}) out of range");
            if w > 0.0 && w.is_finite() {
                *rows[u].entry(v).or_insert(0.0) += w;
            }
        }
        let out = rows
            .into_iter()
            .map(|row| {
                let total: f64 = row.values().sum();
                row.into_iter().map(|(v, w)| (v, w / total)).collect()
            })
            .collect();
        Self { out }
    }

    /// Each edge is added in both directions (self-loops once).
    pub fn from_undirected_edges<I>(node_count: usize, edges: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let both = edges.into_iter().flat_map(|(u, v, w)| {
            let back = (u != v).then_some((v, u, w));
            std::iter::once((u, v, w)).chain(back)
        });
        Self::from_directed_edges(node_count, both)
    }

    pub fn node_count(&self) -> usize {
        self.out.len()
    }

    pub fn out_edges(&self, node: usize) -> &[(usize, f64)] {
        &self.out[node]
    }

    pub fn is_dangling(&self, node: usize) -> bool {
        self.out[node].is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PprOutcome {
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// L1 distance between the last two iterates.
    pub residual: f64,
}

/// Runs PPR from weighted seed nodes given by index.
pub fn personalized_pagerank(
    graph: &TransitionGraph,
    seeds: &[(usize, f64)],
    params: &PprParams,
) -> Result<PprOutcome, RetrievalError> {
    params.validate()?;
    if seeds.is_empty() {
        return Err(RetrievalError::InvalidSeeds("seed set is empty".into()));
    }
    let n = graph.node_count();
    let mut teleport = vec![0.0; n];
    for &(node, w) in seeds {
        if node >= n {
            return Err(RetrievalError::UnknownSeedNode {
                node: format!("#{node}"),
            });
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(RetrievalError::InvalidSeeds(format!(
                "seed weight must be positive and finite, got {w}"
            )));
        }
        teleport[node] += w;
    }
    let total: f64 = teleport.iter().sum();
    teleport.iter_mut().for_each(|x| *x /= total);

    let d = params.damping;
    let mut scores = teleport.clone();
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iterations {
        iterations += 1;
        let dangling: f64 = (0..n)
            .filter(|&u| graph.is_dangling(u))
            .map(|u| scores[u])
            .sum();
        let restart = 1.0 - d + d * dangling;
        for (x, p) in next.iter_mut().zip(&teleport) {
            *x = restart * p;
        }
        for (u, &mass) in scores.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for &(v, w) in graph.out_edges(u) {
                next[v] += d * mass * w;
            }
        }
        residual = scores.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut scores, &mut next);
        if residual < params.tolerance {
            converged = true;
            break;
        }
    }

    Ok(PprOutcome {
        scores,
        iterations,
        converged,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeScores {
    pub scores: BTreeMap<NodeKey, f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// PPR over a compiled knowledge graph with seeds given by node key.
pub fn personalized_pagerank_nodes(
    graph: &CompiledGraph,
    seeds: &BTreeMap<NodeKey, f64>,
    params: &PprParams,
) -> Result<NodeScores, RetrievalError> {
    let indexed = seeds
        .iter()
        .map(|(key, &w)| {
            graph
                .node_index(key)
                .map(|i| (i, w))
                .ok_or_else(|| RetrievalError::UnknownSeedNode {
                    node: key.to_string(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let outcome = personalized_pagerank(graph.transitions(), &indexed, params)?;
    let scores = graph
        .nodes()
        .iter()
        .cloned()
        .zip(outcome.scores)
        .collect();
    Ok(NodeScores {
        scores,
        iterations: outcome.iterations,
        converged: outcome.converged,
    })
}
