//! Multi-turn retrieval-augmented generation over a passage corpus and an
//! entity graph, with a policy that picks passage, graph or hybrid retrieval
//! at every turn.
//!
//! The crate covers the corpus store, dense / personalized-PageRank / fused
//! retrieval, the special-token action protocol, the episode orchestrator,
//! reward and advantage computation for two-stage GRPO training, a tabular
//! training simulator, and benchmark evaluation.

pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod orchestrator;
pub mod policy;
pub mod protocol;
pub mod retrieval;
pub mod reward;
pub mod trainer;

pub use corpus::{load_corpus_dir, CorpusStore};
pub use orchestrator::{run_batch, run_episode, EpisodeConfig, Trajectory};
pub use protocol::{parse_rollout_segment, Action};
pub use retrieval::{RetrievalMode, Retriever, RetrieverConfig};
