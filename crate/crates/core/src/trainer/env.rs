//! Synthetic retrieval environment.
//!
//! Every question carries a hidden evidence requirement (passage evidence,
//! graph evidence, both or neither). A search finds each missing kind of
//! evidence with a probability that depends on the retrieval mode. Answering
//! is correct iff everything required has been gathered. Answers count as a
//! step, and an episode that reaches the cap without answering is wrong.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::retrieval::RetrievalMode;
use crate::reward::UnitCosts;

use super::tabular::TabularPolicy;

/// Evidence bit for facts found in passages.
pub const PASSAGE_EVIDENCE: u8 = 0b01;
/// Evidence bit for facts only reachable through the graph.
pub const GRAPH_EVIDENCE: u8 = 0b10;
const EVIDENCE_KINDS: [u8; 2] = [PASSAGE_EVIDENCE, GRAPH_EVIDENCE];
const EVIDENCE_SUBSETS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimAction {
    SearchPassage,
    SearchGraph,
    SearchHybrid,
    Answer,
}

impl SimAction {
    pub const ALL: [SimAction; 4] = [
        SimAction::SearchPassage,
        SimAction::SearchGraph,
        SimAction::SearchHybrid,
        SimAction::Answer,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn mode(self) -> Option<RetrievalMode> {
        match self {
            SimAction::SearchPassage => Some(RetrievalMode::Passage),
            SimAction::SearchGraph => Some(RetrievalMode::Graph),
            SimAction::SearchHybrid => Some(RetrievalMode::Hybrid),
            SimAction::Answer => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionType {
    pub name: String,
    /// Bitmask over [`PASSAGE_EVIDENCE`] and [`GRAPH_EVIDENCE`].
    pub requirement: u8,
    /// Sampling weight within a batch.
    pub weight: f64,
}

/// Probability that one search in a mode finds each kind of evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FindProbability {
    pub passage: f64,
    pub graph: f64,
}

impl FindProbability {
    fn for_kind(&self, kind: u8) -> f64 {
        if kind == PASSAGE_EVIDENCE {
            self.passage
        } else {
            self.graph
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEnv {
    pub question_types: Vec<QuestionType>,
    pub passage_mode: FindProbability,
    pub graph_mode: FindProbability,
    pub hybrid_mode: FindProbability,
    pub unit_costs: UnitCosts,
    /// Maximum number of actions per episode, the answer included.
    pub cap: usize,
}

impl Default for SimEnv {
    /// Mixed environment: some questions need no retrieval, some need
    /// passages, some need the graph, some need both.
    fn default() -> Self {
        Self {
            question_types: vec![
                QuestionType::new("no_evidence", 0, 0.25),
                QuestionType::new("passage", PASSAGE_EVIDENCE, 0.35),
                QuestionType::new("graph", GRAPH_EVIDENCE, 0.2),
                QuestionType::new("both", PASSAGE_EVIDENCE | GRAPH_EVIDENCE, 0.2),
            ],
            passage_mode: FindProbability { passage: 0.9, graph: 0.1 },
            graph_mode: FindProbability { passage: 0.3, graph: 0.9 },
            hybrid_mode: FindProbability { passage: 0.9, graph: 0.9 },
            unit_costs: UnitCosts::default(),
            cap: 4,
        }
    }
}

impl QuestionType {
    pub fn new(name: &str, requirement: u8, weight: f64) -> Self {
        Self {
            name: name.to_string(),
            requirement,
            weight,
        }
    }
}

/// One sampled decision with the sampling policy's log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub state: usize,
    pub action: SimAction,
    pub old_log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrajectory {
    pub question_type: usize,
    pub decisions: Vec<Decision>,
    pub answered: bool,
    pub correct: bool,
    pub retrieval_turns: usize,
    pub cost: f64,
}

impl SimTrajectory {
    pub fn outcome(&self) -> u8 {
        u8::from(self.correct)
    }
}

/// Expected behaviour of a policy, computed exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub accuracy: f64,
    pub mean_turns: f64,
    pub mean_cost: f64,
}

impl SimEnv {
    /// An environment where every question is answerable without retrieval.
    pub fn answer_immediately() -> Self {
        Self {
            question_types: vec![QuestionType::new("no_evidence", 0, 1.0)],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.cap == 0 {
            return Err("cap must be positive".into());
        }
        if self.question_types.is_empty() {
            return Err("at least one question type is required".into());
        }
        for q in &self.question_types {
            if q.requirement > (PASSAGE_EVIDENCE | GRAPH_EVIDENCE) {
                return Err(format!("question type `{}` has an invalid requirement", q.name));
            }
            if !(q.weight.is_finite() && q.weight >= 0.0) {
                return Err(format!("question type `{}` has an invalid weight", q.name));
            }
        }
        if self.question_types.iter().map(|q| q.weight).sum::<f64>() <= 0.0 {
            return Err("question type weights sum to zero".into());
        }
        for p in [self.passage_mode, self.graph_mode, self.hybrid_mode] {
            if !(0.0..=1.0).contains(&p.passage) || !(0.0..=1.0).contains(&p.graph) {
                return Err("find probabilities must lie in [0, 1]".into());
            }
        }
        if !self.unit_costs.is_valid() {
            return Err("unit costs must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn state_count(&self) -> usize {
        self.question_types.len() * self.cap * EVIDENCE_SUBSETS
    }

    /// Index of the tabular state `(question type, step, gathered evidence)`.
    pub fn state_index(&self, question_type: usize, step: usize, gathered: u8) -> usize {
        (question_type * self.cap + step) * EVIDENCE_SUBSETS + gathered as usize
    }

    pub fn find_probability(&self, mode: RetrievalMode) -> FindProbability {
        match mode {
            RetrievalMode::Passage => self.passage_mode,
            RetrievalMode::Graph => self.graph_mode,
            RetrievalMode::Hybrid => self.hybrid_mode,
        }
    }

    /// Question type weights normalized to sum to one.
    pub fn type_probabilities(&self) -> Vec<f64> {
        let total: f64 = self.question_types.iter().map(|q| q.weight).sum();
        self.question_types.iter().map(|q| q.weight / total).collect()
    }

    pub fn sample_question_type<R: Rng>(&self, rng: &mut R) -> usize {
        let probs = self.type_probabilities();
        sample_index(&probs, rng.random::<f64>())
    }

    /// Plays one episode. Each search draws one uniform per evidence kind,
    /// whether or not the kind is still missing, so the random stream does
    /// not depend on the question's requirement.
    pub fn rollout<R: Rng>(&self, policy: &TabularPolicy, question_type: usize, rng: &mut R) -> SimTrajectory {
        let required = self.question_types[question_type].requirement;
        let mut gathered = 0u8;
        let mut t = SimTrajectory {
            question_type,
            decisions: Vec::new(),
            answered: false,
            correct: false,
            retrieval_turns: 0,
            cost: 0.0,
        };
        for step in 0..self.cap {
            let state = self.state_index(question_type, step, gathered);
            let probs = policy.probabilities(state);
            let a = sample_index(&probs, rng.random::<f64>());
            let action = SimAction::ALL[a];
            t.decisions.push(Decision {
                state,
                action,
                old_log_prob: policy.log_probability(state, a),
            });
            let Some(mode) = action.mode() else {
                t.answered = true;
                t.correct = gathered & required == required;
                break;
            };
            t.retrieval_turns += 1;
            t.cost += self.unit_costs.for_mode(mode);
            let find = self.find_probability(mode);
            for kind in EVIDENCE_KINDS {
                let u = rng.random::<f64>();
                if required & kind != 0 && u < find.for_kind(kind) {
                    gathered |= kind;
                }
            }
        }
        t
    }

    /// Exact expected accuracy, turns and cost of `policy`, enumerating every
    /// action and evidence outcome.
    pub fn evaluate(&self, policy: &TabularPolicy) -> PolicyEvaluation {
        let mut total = PolicyEvaluation::default();
        for (qt, p) in self.type_probabilities().into_iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let e = self.evaluate_from(policy, qt, 0, 0);
            total.accuracy += p * e.accuracy;
            total.mean_turns += p * e.mean_turns;
            total.mean_cost += p * e.mean_cost;
        }
        total
    }

    fn evaluate_from(&self, policy: &TabularPolicy, qt: usize, step: usize, gathered: u8) -> PolicyEvaluation {
        let mut out = PolicyEvaluation::default();
        if step == self.cap {
            return out;
        }
        let required = self.question_types[qt].requirement;
        let probs = policy.probabilities(self.state_index(qt, step, gathered));
        for (action, &pa) in SimAction::ALL.iter().zip(&probs) {
            if pa == 0.0 {
                continue;
            }
            let Some(mode) = action.mode() else {
                if gathered & required == required {
                    out.accuracy += pa;
                }
                continue;
            };
            let cost = self.unit_costs.for_mode(mode);
            out.mean_turns += pa;
            out.mean_cost += pa * cost;
            for (next, pn) in self.transitions(mode, required, gathered) {
                let sub = self.evaluate_from(policy, qt, step + 1, next);
                out.accuracy += pa * pn * sub.accuracy;
                out.mean_turns += pa * pn * sub.mean_turns;
                out.mean_cost += pa * pn * sub.mean_cost;
            }
        }
        out
    }

    /// Distribution over gathered-evidence sets after one search.
    fn transitions(&self, mode: RetrievalMode, required: u8, gathered: u8) -> Vec<(u8, f64)> {
        let find = self.find_probability(mode);
        let mut dist = vec![(gathered, 1.0)];
        for kind in EVIDENCE_KINDS {
            if required & kind == 0 || gathered & kind != 0 {
                continue;
            }
            let p = find.for_kind(kind);
            dist = dist
                .into_iter()
                .flat_map(|(g, q)| [(g | kind, q * p), (g, q * (1.0 - p))])
                .filter(|&(_, q)| q > 0.0)
                .collect();
        }
        dist
    }
}

/// Draws `G` trajectories for one question type with a dedicated RNG.
pub fn rollout_group(
    env: &SimEnv,
    policy: &TabularPolicy,
    question_type: usize,
    group_size: usize,
    seed: u64,
) -> Vec<SimTrajectory> {
    assert!(group_size >= 2, "group size must be at least 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..group_size)
        .map(|_| env.rollout(policy, question_type, &mut rng))
        .collect()
}

/// Inverse-CDF sampling; falls back to the last index with positive mass
/// when rounding leaves `u` past the cumulative total.
fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
