//! The multi-turn episode loop.
//!
//! Each outer iteration asks the policy for one segment, parses it, and
//! either retrieves and injects documents, injects an error notice, or stops.
//! The step counter advances on every iteration, so `budget` bounds the
//! number of segments (and therefore of retrieval calls).

use std::io::{self, Write};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{render_prompt, PolicyClient, PolicyError, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use crate::protocol::{
    information_notice, parse_rollout_segment, render_information, Action, Segment, STOP_SEQUENCES,
};
use crate::retrieval::{RetrievalCost, RetrievalMode, Retriever, DEFAULT_TOP_K};

pub const DEFAULT_BUDGET: usize = 4;

/// Injected when a search block cannot be parsed.
pub const MALFORMED_SEARCH_NOTICE: &str =
    "<information>search query malformed: specify <Passage> and/or <Graph></information>";

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("policy endpoint unreachable after {attempts} attempts: {last}")]
    PolicyUnreachable { attempts: usize, last: String },
    #[error("invalid episode configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub budget: usize,
    pub top_k: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub max_attempts: usize,
    /// First retry delay; doubles on every further attempt.
    pub backoff: Duration,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            top_k: DEFAULT_TOP_K,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question: String,
    pub segments: Vec<Segment>,
    pub final_answer: Option<String>,
    pub retrieval_turns: usize,
    pub total_retrieval_cost: RetrievalCost,
    pub steps_used: usize,
    /// Full context as seen by the policy, prompt included.
    #[serde(skip)]
    pub transcript: String,
}

impl Trajectory {
    /// Modes of the searches that actually retrieved, in order.
    pub fn executed_modes(&self) -> impl Iterator<Item = RetrievalMode> + '_ {
        self.segments.iter().filter_map(|s| match (&s.action, &s.information) {
            (Action::Search { mode, .. }, Some(_)) => Some(*mode),
            _ => None,
        })
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn check_invariants(&self, budget: usize) -> Result<(), String> {
        let executed = self
            .segments
            .iter()
            .filter(|s| matches!(s.action, Action::Search { .. }) && s.information.is_some())
            .count();
        if executed != self.retrieval_turns {
            return Err(format!("retrieval_turns {} != executed searches {executed}", self.retrieval_turns));
        }
        if !(self.retrieval_turns <= self.steps_used && self.steps_used <= budget) {
            return Err(format!(
                "expected retrieval_turns {} <= steps_used {} <= budget {budget}",
                self.retrieval_turns, self.steps_used
            ));
        }
        if self.segments.len() != self.steps_used {
            return Err(format!("{} segments for {} steps", self.segments.len(), self.steps_used));
        }
        let answered = self.segments.iter().any(|s| matches!(s.action, Action::Answer { .. }));
        if answered != self.final_answer.is_some() {
            return Err("final_answer present iff an answer segment exists".into());
        }
        for s in &self.segments {
            let is_search = matches!(s.action, Action::Search { .. });
            if s.information.is_some() && !is_search {
                return Err("information on a non-search segment".into());
            }
            if s.information.is_some() != s.cost.is_some() {
                return Err("cost present iff information present".into());
            }
        }
        Ok(())
    }
}

fn generate_with_retries(
    policy: &dyn PolicyClient,
    context: &str,
    config: &EpisodeConfig,
) -> Result<String, OrchestratorError> {
    let attempts = config.max_attempts.max(1);
    let mut delay = config.backoff;
    let mut last = String::new();
    for attempt in 1..=attempts {
        match policy.generate(context, &STOP_SEQUENCES, config.temperature, config.max_tokens) {
            Ok(text) => return Ok(text),
            Err(PolicyError::Unreachable(e) | PolicyError::Malformed(e)) => last = e,
        }
        if attempt < attempts {
            thread::sleep(delay);
            delay *= 2;
        }
    }
    Err(OrchestratorError::PolicyUnreachable { attempts, last })
}

/// Runs one episode for `question`.
pub fn run_episode(
    question: &str,
    policy: &dyn PolicyClient,
    retriever: &Retriever,
    config: &EpisodeConfig,
) -> Result<Trajectory, OrchestratorError> {
    if config.budget == 0 || config.top_k == 0 {
        return Err(OrchestratorError::InvalidConfig(
            "budget and top_k must be positive".into(),
        ));
    }
    let mut context = render_prompt(question);
    let mut trajectory = Trajectory {
        question: question.to_string(),
        segments: Vec::new(),
        final_answer: None,
        retrieval_turns: 0,
        total_retrieval_cost: RetrievalCost::default(),
        steps_used: 0,
        transcript: String::new(),
    };

    let mut step = 0;
    while step < config.budget {
        let generated = generate_with_retries(policy, &context, config)?;
        let action = parse_rollout_segment(&generated);
        context.push_str(&generated);
        step += 1;

        let mut segment = Segment {
            generated_text: generated,
            action: action.clone(),
            information: None,
            cost: None,
            notice: None,
            doc_ids: Vec::new(),
        };
        let mut stop = false;
        match &action {
            Action::Search { mode, query } => {
                let rendered = retriever
                    .retrieve(query, *mode, config.top_k)
                    .map_err(|e| e.to_string())
                    .and_then(|out| {
                        render_information(&out.ranked, retriever.store())
                            .map(|info| (info, out))
                            .map_err(|e| e.to_string())
                    });
                match rendered {
                    Ok((info, out)) => {
                        inject(&mut context, &info);
                        trajectory.retrieval_turns += 1;
                        trajectory.total_retrieval_cost += out.cost;
                        segment.doc_ids = out.ranked.ids().map(str::to_string).collect();
                        segment.information = Some(info);
                        segment.cost = Some(out.cost);
                    }
                    Err(e) => {
                        let notice = information_notice(&format!("retrieval failed: {e}"));
                        inject(&mut context, &notice);
                        segment.notice = Some(notice);
                    }
                }
            }
            Action::Answer { text } => {
                trajectory.final_answer = Some(text.clone());
                stop = true;
            }
            Action::Terminated => stop = true,
            Action::ProtocolError { .. } => {
                inject(&mut context, MALFORMED_SEARCH_NOTICE);
                segment.notice = Some(MALFORMED_SEARCH_NOTICE.to_string());
            }
        }
        trajectory.segments.push(segment);
        if stop {
            break;
        }
    }
    trajectory.steps_used = step;
    trajectory.transcript = context;
    Ok(trajectory)
}

fn inject(context: &mut String, block: &str) {
    context.push('\n');
    context.push_str(block);
    context.push('\n');
}

/// Runs episodes for every question with at most `parallelism` in flight.
/// Results keep input order; a failed episode does not stop the others.
pub fn run_batch(
    questions: &[String],
    policy: &dyn PolicyClient,
    retriever: &Retriever,
    config: &EpisodeConfig,
    parallelism: usize,
) -> Vec<Result<Trajectory, OrchestratorError>> {
    use rayon::prelude::*;

    let run = |q: &String| run_episode(q, policy, retriever, config);
    if parallelism <= 1 || questions.len() <= 1 {
        return questions.iter().map(run).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| questions.par_iter().map(run).collect()),
        Err(_) => questions.iter().map(run).collect(),
    }
}

/// Writes one JSON line per trajectory.
pub fn write_transcripts<W: Write>(mut out: W, trajectories: &[Trajectory]) -> io::Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
