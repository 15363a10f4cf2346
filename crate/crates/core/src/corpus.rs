//! Immutable corpus artifacts: passages, dense vectors and the knowledge graph.
//!
//! All three inputs are line-delimited JSON. Loading validates every record,
//! re-normalizes vectors to unit length and compiles the graph into a
//! transition operator ready for personalized PageRank.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::ppr::TransitionGraph;

pub const PASSAGES_FILE: &str = "passages.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const GRAPH_FILE: &str = "graph.jsonl";

/// Separator between the parts of a fact embedding's owner key
/// (`subject \t relation \t object`).
pub const FACT_KEY_SEPARATOR: char = '\t';

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate id `{id}`")]
    DuplicateId { id: String },
    #[error("vector for `{owner_id}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        owner_id: String,
        expected: usize,
        found: usize,
    },
    #[error("dangling edge {edge}: `{missing}` does not exist")]
    DanglingEdge { edge: String, missing: String },
    #[error("passage embedding owner `{owner_id}` is not a known passage")]
    UnknownOwner { owner_id: String },
    #[error("passage `{passage_id}` has no embedding")]
    MissingEmbedding { passage_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Passage,
    Entity,
    Fact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub owner_id: String,
    pub kind: EmbeddingKind,
    pub vector: Vec<f64>,
}

/// One line of the graph file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GraphRecord {
    Relation { s: String, r: String, o: String },
    Mention { e: String, p: String },
    Synonym { a: String, b: String, w: f64 },
}

/// Canonical entity key: case-folded with internal whitespace collapsed.
pub fn canonical_entity(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for (i, token) in name.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&token.to_lowercase());
    }
    out
}

/// Scales `v` to unit L2 norm in place. Returns `false` for zero or
/// non-finite vectors, which cannot be normalized.
pub fn normalize_in_place(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return false;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationEdge {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MentionEdge {
    pub entity: String,
    pub passage_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymEdge {
    pub a: String,
    pub b: String,
    pub weight: f64,
}

/// A node of the compiled graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "key", rename_all = "lowercase")]
pub enum NodeKey {
    Entity(String),
    Passage(String),
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKey::Entity(e) => write!(f, "entity:{e}"),
            NodeKey::Passage(p) => write!(f, "passage:{p}"),
        }
    }
}

/// Typed entity/passage graph. Synonym edges are undirected and stored once
/// with endpoints in ascending order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub entity_nodes: BTreeSet<String>,
    pub passage_nodes: BTreeSet<String>,
    pub relation_edges: BTreeSet<RelationEdge>,
    pub mention_edges: BTreeSet<MentionEdge>,
    #[serde(with = "synonym_list")]
    synonym_edges: BTreeMap<(String, String), f64>,
}

/// Tuple-keyed maps have no JSON form; synonyms travel as an edge list.
mod synonym_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::SynonymEdge;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(String, String), f64>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let edges: Vec<SynonymEdge> = map
            .iter()
            .map(|((a, b), w)| SynonymEdge {
                a: a.clone(),
                b: b.clone(),
                weight: *w,
            })
            .collect();
        edges.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<(String, String), f64>, D::Error> {
        let edges = Vec::<SynonymEdge>::deserialize(de)?;
        Ok(edges
            .into_iter()
            .map(|e| {
                let key = if e.a <= e.b { (e.a, e.b) } else { (e.b, e.a) };
                (key, e.weight)
            })
            .collect())
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_nodes.is_empty()
            && self.passage_nodes.is_empty()
            && self.relation_edges.is_empty()
            && self.mention_edges.is_empty()
            && self.synonym_edges.is_empty()
    }

    /// Inserts a relation edge, creating both entity nodes.
    pub fn add_relation(&mut self, subject: &str, relation: &str, object: &str) {
        let subject = canonical_entity(subject);
        let object = canonical_entity(object);
        self.entity_nodes.insert(subject.clone());
        self.entity_nodes.insert(object.clone());
        self.relation_edges.insert(RelationEdge {
            subject,
            relation: relation.trim().to_string(),
            object,
        });
    }

    /// Inserts a mention edge, creating the entity node. The passage node is
    /// not created: passage nodes mirror the passage store.
    pub fn add_mention(&mut self, entity: &str, passage_id: &str) {
        let entity = canonical_entity(entity);
        self.entity_nodes.insert(entity.clone());
        self.mention_edges.insert(MentionEdge {
            entity,
            passage_id: passage_id.to_string(),
        });
    }

    /// Inserts an undirected synonym edge. A repeated pair keeps the larger weight.
    pub fn add_synonym(&mut self, a: &str, b: &str, weight: f64) {
        let a = canonical_entity(a);
        let b = canonical_entity(b);
        self.entity_nodes.insert(a.clone());
        self.entity_nodes.insert(b.clone());
        let key = if a <= b { (a, b) } else { (b, a) };
        let slot = self.synonym_edges.entry(key).or_insert(weight);
        if weight > *slot {
            *slot = weight;
        }
    }

    pub fn synonym_edges(&self) -> impl Iterator<Item = SynonymEdge> + '_ {
        self.synonym_edges.iter().map(|((a, b), w)| SynonymEdge {
            a: a.clone(),
            b: b.clone(),
            weight: *w,
        })
    }

    pub fn synonym_count(&self) -> usize {
        self.synonym_edges.len()
    }

    /// Compiles the graph into a random-walk transition operator. Every edge
    /// is traversable in both directions; relation and mention edges carry
    /// weight 1, synonym edges their own weight.
    pub fn compile(&self) -> CompiledGraph {
        let mut nodes: Vec<NodeKey> = self
            .entity_nodes
            .iter()
            .cloned()
            .map(NodeKey::Entity)
            .collect();
        nodes.extend(self.passage_nodes.iter().cloned().map(NodeKey::Passage));
        let index: HashMap<NodeKey, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();

        let entity = |name: &str| index.get(&NodeKey::Entity(name.to_string())).copied();
        let passage = |id: &str| index.get(&NodeKey::Passage(id.to_string())).copied();

        let mut edges = Vec::new();
        for e in &self.relation_edges {
            if let (Some(u), Some(v)) = (entity(&e.subject), entity(&e.object)) {
                edges.push((u, v, 1.0));
            }
        }
        for m in &self.mention_edges {
            if let (Some(u), Some(v)) = (entity(&m.entity), passage(&m.passage_id)) {
                edges.push((u, v, 1.0));
            }
        }
        for ((a, b), w) in &self.synonym_edges {
            if let (Some(u), Some(v)) = (entity(a), entity(b)) {
                edges.push((u, v, *w));
            }
        }
        let transitions = TransitionGraph::from_undirected_edges(nodes.len(), edges);
        CompiledGraph {
            nodes,
            index,
            transitions,
        }
    }
}

/// The graph compiled to dense node indices plus its transition operator.
#[derive(Debug, Clone)]
pub struct CompiledGraph {
    nodes: Vec<NodeKey>,
    index: HashMap<NodeKey, usize>,
    transitions: TransitionGraph,
}

impl CompiledGraph {
    pub fn nodes(&self) -> &[NodeKey] {
        &self.nodes
    }

    pub fn node_index(&self, key: &NodeKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn transitions(&self) -> &TransitionGraph {
        &self.transitions
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Finding {
    DanglingEdge { edge: String, missing: String },
    UnknownPassageNode { passage_id: String },
    OrphanNode { node: String },
    InvalidWeight { edge: String, weight: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DanglingEdge { edge, missing } => write!(f, "dangling edge {edge}: `{missing}` is missing"),
            Finding::UnknownPassageNode { passage_id } => {
                write!(f, "graph passage node `{passage_id}` is not in the passage store")
            }
            Finding::OrphanNode { node } => write!(f, "orphan node {node}"),
            Finding::InvalidWeight { edge, weight } => write!(f, "invalid weight {weight} on {edge}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn dangling_edges(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| matches!(f, Finding::DanglingEdge { .. }))
    }
}

/// Lists every dangling edge endpoint, every passage node missing from the
/// store, every entity node with no incident edge and every out-of-range
/// synonym weight.
pub fn validate_graph(graph: &KnowledgeGraph, store: &CorpusStore) -> ValidationReport {
    let mut findings = Vec::new();
    let mut touched: BTreeSet<&str> = BTreeSet::new();

    let dangling = |edge: String, missing: &str| Finding::DanglingEdge {
        edge,
        missing: missing.to_string(),
    };

    for e in &graph.relation_edges {
        let label = format!("relation({}, {}, {})", e.subject, e.relation, e.object);
        for endpoint in [&e.subject, &e.object] {
            if graph.entity_nodes.contains(endpoint) {
                touched.insert(endpoint);
            } else {
                findings.push(dangling(label.clone(), endpoint));
            }
        }
    }
    for m in &graph.mention_edges {
        let label = format!("mention({}, {})", m.entity, m.passage_id);
        if graph.entity_nodes.contains(&m.entity) {
            touched.insert(&m.entity);
        } else {
            findings.push(dangling(label.clone(), &m.entity));
        }
        if !graph.passage_nodes.contains(&m.passage_id) || store.passage(&m.passage_id).is_none() {
            findings.push(dangling(label, &m.passage_id));
        }
    }
    for ((a, b), w) in &graph.synonym_edges {
        let label = format!("synonym({a}, {b})");
        for endpoint in [a, b] {
            if graph.entity_nodes.contains(endpoint) {
                touched.insert(endpoint);
            } else {
                findings.push(dangling(label.clone(), endpoint));
            }
        }
        if !(0.0..=1.0).contains(w) {
            findings.push(Finding::InvalidWeight {
                edge: label,
                weight: w.to_string(),
            });
        }
    }
    for p in &graph.passage_nodes {
        if store.passage(p).is_none() {
            findings.push(Finding::UnknownPassageNode {
                passage_id: p.clone(),
            });
        }
    }
    for e in &graph.entity_nodes {
        if !touched.contains(e.as_str()) {
            findings.push(Finding::OrphanNode {
                node: NodeKey::Entity(e.clone()).to_string(),
            });
        }
    }
    ValidationReport { findings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorpusCounts {
    pub passages: usize,
    pub passage_vectors: usize,
    pub entity_vectors: usize,
    pub fact_vectors: usize,
    pub entities: usize,
    pub relation_edges: usize,
    pub mention_edges: usize,
    pub synonym_edges: usize,
}

impl fmt::Display for CorpusCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "passages={} passage_vectors={} entity_vectors={} fact_vectors={} entities={} relations={} mentions={} synonyms={}",
            self.passages,
            self.passage_vectors,
            self.entity_vectors,
            self.fact_vectors,
            self.entities,
            self.relation_edges,
            self.mention_edges,
            self.synonym_edges
        )
    }
}

/// A (subject, relation, object) fact with its unit vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactVector {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub vector: Vec<f64>,
}

/// The loaded corpus. Immutable after construction.
#[derive(Debug, Clone, Serialize)]
pub struct CorpusStore {
    passages: Vec<Passage>,
    dimension: usize,
    passage_vectors: Vec<Vec<f64>>,
    entity_vectors: BTreeMap<String, Vec<f64>>,
    fact_vectors: Vec<FactVector>,
    graph: Option<KnowledgeGraph>,
    #[serde(skip)]
    passage_index: HashMap<String, usize>,
    #[serde(skip)]
    compiled: Option<CompiledGraph>,
}

impl CorpusStore {
    /// Builds a store from in-memory parts. Vectors are normalized; the graph's
    /// passage nodes are replaced by the full passage id set.
    pub fn from_parts(
        passages: Vec<Passage>,
        embeddings: Vec<EmbeddingRecord>,
        graph: Option<KnowledgeGraph>,
    ) -> Result<Self, CorpusError> {
        let mut passage_index = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if passage_index.insert(p.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { id: p.id.clone() });
            }
        }

        let mut dimension = None;
        let mut passage_vectors: Vec<Option<Vec<f64>>> = vec![None; passages.len()];
        let mut entity_vectors = BTreeMap::new();
        let mut fact_vectors = Vec::new();
        let mut seen_facts = BTreeSet::new();

        for record in embeddings {
            let EmbeddingRecord {
                owner_id,
                kind,
                mut vector,
            } = record;
            let expected = *dimension.get_or_insert(vector.len());
            if vector.len() != expected {
                return Err(CorpusError::DimensionMismatch {
                    owner_id,
                    expected,
                    found: vector.len(),
                });
            }
            if !normalize_in_place(&mut vector) {
                // surfaced as malformed by the file loader; in-memory callers get the same class
                return Err(CorpusError::MalformedRecord {
                    path: PathBuf::new(),
                    line: 0,
                    message: format!("vector for `{owner_id}` has zero or non-finite norm"),
                });
            }
            match kind {
                EmbeddingKind::Passage => {
                    let i = *passage_index
                        .get(&owner_id)
                        .ok_or_else(|| CorpusError::UnknownOwner {
                            owner_id: owner_id.clone(),
                        })?;
                    if passage_vectors[i].replace(vector).is_some() {
                        return Err(CorpusError::DuplicateId { id: owner_id });
                    }
                }
                EmbeddingKind::Entity => {
                    let key = canonical_entity(&owner_id);
                    if entity_vectors.insert(key.clone(), vector).is_some() {
                        return Err(CorpusError::DuplicateId { id: key });
                    }
                }
                EmbeddingKind::Fact => {
                    let (subject, relation, object) = parse_fact_key(&owner_id).ok_or_else(|| {
                        CorpusError::MalformedRecord {
                            path: PathBuf::new(),
                            line: 0,
                            message: format!("fact key `{owner_id}` is not subject\\trelation\\tobject"),
                        }
                    })?;
                    let key = (subject.clone(), relation.clone(), object.clone());
                    if !seen_facts.insert(key) {
                        return Err(CorpusError::DuplicateId { id: owner_id });
                    }
                    fact_vectors.push(FactVector {
                        subject,
                        relation,
                        object,
                        vector,
                    });
                }
            }
        }

        let passage_vectors = passage_vectors
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| CorpusError::MissingEmbedding {
                    passage_id: passages[i].id.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut store = CorpusStore {
            passages,
            dimension: dimension.unwrap_or(0),
            passage_vectors,
            entity_vectors,
            fact_vectors,
            graph: None,
            passage_index,
            compiled: None,
        };

        if let Some(mut graph) = graph.filter(|g| !g.is_empty()) {
            graph.passage_nodes = store.passages.iter().map(|p| p.id.clone()).collect();
            let report = validate_graph(&graph, &store);
            if let Some(Finding::DanglingEdge { edge, missing }) = report.dangling_edges().next() {
                return Err(CorpusError::DanglingEdge {
                    edge: edge.clone(),
                    missing: missing.clone(),
                });
            }
            store.compiled = Some(graph.compile());
            store.graph = Some(graph);
        }
        Ok(store)
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn passage(&self, id: &str) -> Option<&Passage> {
        self.passage_index.get(id).map(|&i| &self.passages[i])
    }

    /// Vector dimension shared by every record (0 for an empty store).
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Passages paired with their unit vectors, in file order.
    pub fn passage_vectors(&self) -> impl Iterator<Item = (&Passage, &[f64])> {
        self.passages
            .iter()
            .zip(self.passage_vectors.iter().map(Vec::as_slice))
    }

    pub fn entity_vectors(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.entity_vectors
    }

    pub fn fact_vectors(&self) -> &[FactVector] {
        &self.fact_vectors
    }

    pub fn graph(&self) -> Option<&KnowledgeGraph> {
        self.graph.as_ref()
    }

    pub fn compiled_graph(&self) -> Option<&CompiledGraph> {
        self.compiled.as_ref()
    }

    pub fn counts(&self) -> CorpusCounts {
        let graph = self.graph.as_ref();
        CorpusCounts {
            passages: self.passages.len(),
            passage_vectors: self.passage_vectors.len(),
            entity_vectors: self.entity_vectors.len(),
            fact_vectors: self.fact_vectors.len(),
            entities: graph.map_or(0, |g| g.entity_nodes.len()),
            relation_edges: graph.map_or(0, |g| g.relation_edges.len()),
            mention_edges: graph.map_or(0, |g| g.mention_edges.len()),
            synonym_edges: graph.map_or(0, |g| g.synonym_count()),
        }
    }

    /// Deterministic JSON serialization of the whole store.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("store serialization cannot fail")
    }
}

/// Splits a fact owner key into canonical (subject, relation, object).
pub fn parse_fact_key(key: &str) -> Option<(String, String, String)> {
    let mut parts = key.split(FACT_KEY_SEPARATOR);
    let (s, r, o) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let (s, r, o) = (canonical_entity(s), r.trim().to_string(), canonical_entity(o));
    if s.is_empty() || o.is_empty() {
        return None;
    }
    Some((s, r, o))
}

pub fn fact_key(subject: &str, relation: &str, object: &str) -> String {
    format!(
        "{}{FACT_KEY_SEPARATOR}{}{FACT_KEY_SEPARATOR}{}",
        canonical_entity(subject),
        relation.trim(),
        canonical_entity(object)
    )
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::MalformedRecord {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads and validates the three corpus files. `graph_path = None` yields a
/// store without a graph (passage retrieval only).
pub fn load_corpus(
    passages_path: &Path,
    embeddings_path: &Path,
    graph_path: Option<&Path>,
) -> Result<CorpusStore, CorpusError> {
    let mut passages = Vec::new();
    for (line, p) in read_records::<Passage>(passages_path)? {
        if p.text.trim().is_empty() {
            return Err(malformed(passages_path, line, format!("passage `{}` has empty text", p.id)));
        }
        passages.push(p);
    }

    let mut embeddings = Vec::new();
    for (line, rec) in read_records::<EmbeddingRecord>(embeddings_path)? {
        if rec.vector.is_empty() || rec.vector.iter().any(|x| !x.is_finite()) {
            return Err(malformed(embeddings_path, line, "vector must be non-empty and finite"));
        }
        if rec.vector.iter().all(|&x| x == 0.0) {
            return Err(malformed(embeddings_path, line, "zero vector cannot be normalized"));
        }
        if rec.kind == EmbeddingKind::Fact && parse_fact_key(&rec.owner_id).is_none() {
            return Err(malformed(embeddings_path, line, "fact owner_id must be subject\\trelation\\tobject"));
        }
        embeddings.push(rec);
    }

    let graph = match graph_path {
        Some(path) => Some(read_graph(path)?),
        None => None,
    };
    CorpusStore::from_parts(passages, embeddings, graph)
}

fn read_graph(path: &Path) -> Result<KnowledgeGraph, CorpusError> {
    let mut graph = KnowledgeGraph::new();
    for (line, record) in read_records::<GraphRecord>(path)? {
        match record {
            GraphRecord::Relation { s, r, o } => {
                if canonical_entity(&s).is_empty() || canonical_entity(&o).is_empty() {
                    return Err(malformed(path, line, "relation endpoints must be non-empty"));
                }
                graph.add_relation(&s, &r, &o);
            }
            GraphRecord::Mention { e, p } => {
                if canonical_entity(&e).is_empty() {
                    return Err(malformed(path, line, "mention entity must be non-empty"));
                }
                graph.add_mention(&e, &p);
            }
            GraphRecord::Synonym { a, b, w } => {
                if !(0.0..=1.0).contains(&w) {
                    return Err(malformed(path, line, format!("synonym weight {w} outside [0, 1]")));
                }
                let (ca, cb) = (canonical_entity(&a), canonical_entity(&b));
                if ca.is_empty() || cb.is_empty() || ca == cb {
                    return Err(malformed(path, line, "synonym needs two distinct non-empty entities"));
                }
                graph.add_synonym(&a, &b, w);
            }
        }
    }
    Ok(graph)
}

/// Loads `passages.jsonl`, `embeddings.jsonl` and, when present, `graph.jsonl`
/// from a corpus directory.
pub fn load_corpus_dir(dir: &Path) -> Result<CorpusStore, CorpusError> {
    let graph = dir.join(GRAPH_FILE);
    load_corpus(
        &dir.join(PASSAGES_FILE),
        &dir.join(EMBEDDINGS_FILE),
        graph.exists().then_some(graph.as_path()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        path
    }

    fn passage(id: &str) -> Passage {
        Passage {
            id: id.into(),
            title: format!("Title {id}"),
            text: format!("text of {id}"),
        }
    }

    fn vec_rec(owner: &str, kind: EmbeddingKind, v: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord {
            owner_id: owner.into(),
            kind,
            vector: v.to_vec(),
        }
    }

    #[test]
    fn canonical_entity_folds_case_and_whitespace() {
        assert_eq!(canonical_entity("  Dave   KOZ\t"), "dave koz");
        assert_eq!(canonical_entity(""), "");
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut v = vec![3.0, 4.0, 12.0];
        assert!(normalize_in_place(&mut v));
        let once = v.clone();
        assert!(normalize_in_place(&mut v));
        for (a, b) in once.iter().zip(&v) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(!normalize_in_place(&mut [0.0, 0.0]));
    }

    #[test]
    fn duplicate_passage_id_rejected() {
        let err = CorpusStore::from_parts(vec![passage("p1"), passage("p1")], vec![], None).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { id } if id == "p1"));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "p.jsonl",
            &[
                r#"{"id":"p1","title":"a","text":"x"}"#,
                r#"{"id":"p2","title":"b","text":"y"}"#,
            ],
        );
        let e = write(
            dir.path(),
            "e.jsonl",
            &[
                r#"{"owner_id":"p1","kind":"passage","vector":[1,0,0,0]}"#,
                r#"{"owner_id":"p2","kind":"passage","vector":[1,0,0,0,0,0,0,0]}"#,
            ],
        );
        let err = load_corpus(&p, &e, None).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::DimensionMismatch { expected: 4, found: 8, .. }
        ));
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "p.jsonl",
            &[r#"{"id":"p1","title":"a","text":"x"}"#, r#"{"id":"p2","title":}"#],
        );
        let e = write(dir.path(), "e.jsonl", &[]);
        match load_corpus(&p, &e, None).unwrap_err() {
            CorpusError::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_passage_text_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "p.jsonl", &[r#"{"id":"p1","title":"a","text":"  "}"#]);
        let e = write(dir.path(), "e.jsonl", &[]);
        assert!(matches!(
            load_corpus(&p, &e, None).unwrap_err(),
            CorpusError::MalformedRecord { .. }
        ));
    }

    #[test]
    fn mention_to_missing_passage_is_dangling() {
        let mut g = KnowledgeGraph::new();
        g.add_mention("e1", "pX");
        let err = CorpusStore::from_parts(
            vec![passage("p1")],
            vec![vec_rec("p1", EmbeddingKind::Passage, &[1.0, 0.0])],
            Some(g),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::DanglingEdge { missing, .. } if missing == "pX"));
    }

    #[test]
    fn missing_passage_vector_rejected() {
        let err = CorpusStore::from_parts(
            vec![passage("p1"), passage("p2")],
            vec![vec_rec("p1", EmbeddingKind::Passage, &[1.0, 0.0])],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::MissingEmbedding { passage_id } if passage_id == "p2"));
    }

    #[test]
    fn vectors_renormalized_on_load() {
        let store = CorpusStore::from_parts(
            vec![passage("p1")],
            vec![vec_rec("p1", EmbeddingKind::Passage, &[0.0, 2.0])],
            None,
        )
        .unwrap();
        let (_, v) = store.passage_vectors().next().unwrap();
        assert_eq!(v, &[0.0, 1.0]);
    }

    #[test]
    fn synonyms_are_stored_once() {
        let mut g = KnowledgeGraph::new();
        g.add_synonym("B", "a", 0.5);
        g.add_synonym("a", "b", 0.9);
        let edges: Vec<_> = g.synonym_edges().collect();
        assert_eq!(edges.len(), 1);
        assert_eq!((edges[0].a.as_str(), edges[0].b.as_str(), edges[0].weight), ("a", "b", 0.9));
    }

    #[test]
    fn validation_of_empty_graph_is_empty() {
        let store = CorpusStore::from_parts(vec![], vec![], None).unwrap();
        assert!(validate_graph(&KnowledgeGraph::new(), &store).is_empty());
    }

    #[test]
    fn validation_flags_missing_passage_mention() {
        let store = CorpusStore::from_parts(
            vec![passage("p1")],
            vec![vec_rec("p1", EmbeddingKind::Passage, &[1.0])],
            None,
        )
        .unwrap();
        let mut g = KnowledgeGraph::new();
        g.passage_nodes.insert("p1".into());
        g.add_mention("e1", "pX");
        let report = validate_graph(&g, &store);
        assert_eq!(report.findings.len(), 1);
        assert_eq!(
            report.findings[0],
            Finding::DanglingEdge {
                edge: "mention(e1, pX)".into(),
                missing: "pX".into()
            }
        );
    }

    #[test]
    fn validation_flags_orphans_and_unknown_passages() {
        let store = CorpusStore::from_parts(vec![], vec![], None).unwrap();
        let mut g = KnowledgeGraph::new();
        g.entity_nodes.insert("lonely".into());
        g.passage_nodes.insert("p9".into());
        let report = validate_graph(&g, &store);
        assert!(report.findings.contains(&Finding::OrphanNode {
            node: "entity:lonely".into()
        }));
        assert!(report.findings.contains(&Finding::UnknownPassageNode {
            passage_id: "p9".into()
        }));
    }

    #[test]
    fn fact_keys_round_trip() {
        let key = fact_key("Superstore", "created by", " Justin  Spitzer");
        assert_eq!(
            parse_fact_key(&key),
            Some(("superstore".into(), "created by".into(), "justin spitzer".into()))
        );
        assert_eq!(parse_fact_key("no tabs here"), None);
    }
}
