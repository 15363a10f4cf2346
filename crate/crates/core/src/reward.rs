//! Answer scoring, retrieval-efficiency rewards and the GRPO objective.
//!
//! Stage 1 rewards only exact-match correctness. Stage 2 adds an efficiency
//! bonus `(t_avg - t) / T` to correct trajectories, where `t_avg` is the mean
//! retrieval cost over the whole batch and `T = 2 * max batch cost`, so the
//! bonus lies in `[-0.5, 0.5]`. Advantages are centered and scaled within
//! each group of `G` trajectories sampled for the same question.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::RetrievalMode;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("stage must be 1 or 2, got {0}")]
pub struct InvalidStage(pub u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    /// Outcome-only reward.
    One,
    /// Outcome plus efficiency for correct trajectories.
    Two,
}

impl TryFrom<u8> for Stage {
    type Error = InvalidStage;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            other => Err(InvalidStage(other)),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        match s {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// Deterministic per-call retrieval cost by mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCosts {
    pub passage: f64,
    pub graph: f64,
    pub hybrid: f64,
}

impl Default for UnitCosts {
    fn default() -> Self {
        Self {
            passage: 1.0,
            graph: 3.0,
            hybrid: 4.0,
        }
    }
}

impl UnitCosts {
    pub fn for_mode(&self, mode: RetrievalMode) -> f64 {
        match mode {
            RetrievalMode::Passage => self.passage,
            RetrievalMode::Graph => self.graph,
            RetrievalMode::Hybrid => self.hybrid,
        }
    }

    /// Non-negative, and hybrid no dearer than running both modes.
    pub fn is_valid(&self) -> bool {
        [self.passage, self.graph, self.hybrid]
            .iter()
            .all(|c| c.is_finite() && *c >= 0.0)
            && self.hybrid <= self.passage + self.graph
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostSource {
    WallClock,
    UnitCost,
}

/// Normalization rule for the efficiency denominator `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TRule {
    /// `T = 2 * max batch cost` (1 when every cost is 0).
    BatchMax2x,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub stage: Stage,
    pub t_rule: TRule,
    pub cost_source: CostSource,
    pub unit_costs: UnitCosts,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            stage: Stage::One,
            t_rule: TRule::BatchMax2x,
            cost_source: CostSource::UnitCost,
            unit_costs: UnitCosts::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub std_floor: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 5,
            clip_epsilon: 0.2,
            kl_coefficient: 0.001,
            std_floor: 1e-8,
        }
    }
}

/// Per-trajectory reward bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub cost: f64,
    pub outcome: u8,
    pub efficiency: f64,
    pub reward: f64,
    pub advantage: f64,
}

/// One line of an exported reward report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub question_id: String,
    pub outcome: u8,
    pub f1: f64,
    pub cost: f64,
    pub efficiency: f64,
    pub reward: f64,
    pub advantage: f64,
}

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("static regex"))
}

/// Lower-case, strip ASCII punctuation, drop articles, collapse whitespace.
pub fn normalize_answer(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = articles().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1 if the normalized answer equals any normalized gold answer.
pub fn em_reward(answer: &str, gold: &[String]) -> u8 {
    let a = normalize_answer(answer);
    u8::from(gold.iter().any(|g| normalize_answer(g) == a))
}

fn token_f1(prediction: &str, gold: &str) -> f64 {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let pred: Vec<&str> = pred.split_whitespace().collect();
    let gold: Vec<&str> = gold.split_whitespace().collect();
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    // 2PR / (P + R) with P = c/|pred| and R = c/|gold|, in one rounding.
    (2 * common) as f64 / (pred.len() + gold.len()) as f64
}

/// Maximum token-level F1 against the gold answers.
pub fn f1_score(answer: &str, gold: &[String]) -> f64 {
    gold.iter()
        .map(|g| token_f1(answer, g))
        .fold(0.0, f64::max)
}

/// Efficiency rewards for one batch. `t_avg` averages every cost in the
/// batch, correct or not; entries for incorrect trajectories are 0
/// placeholders and never enter the reward.
pub fn batch_efficiency_rewards(costs: &[f64], outcomes: &[u8], config: &RewardConfig) -> Vec<f64> {
    assert_eq!(costs.len(), outcomes.len(), "costs and outcomes differ in length");
    if costs.is_empty() {
        return Vec::new();
    }
    let t_avg = costs.iter().sum::<f64>() / costs.len() as f64;
    let t_norm = match config.t_rule {
        TRule::BatchMax2x => {
            let max = costs.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                2.0 * max
            } else {
                1.0
            }
        }
    };
    costs
        .iter()
        .zip(outcomes)
        .map(|(&t, &o)| if o == 1 { (t_avg - t) / t_norm } else { 0.0 })
        .collect()
}

pub fn composite_reward(outcome: u8, efficiency: f64, stage: Stage) -> f64 {
    match (stage, outcome) {
        (Stage::One, o) => f64::from(o),
        (Stage::Two, 0) => 0.0,
        (Stage::Two, _) => 1.0 + efficiency,
    }
}

/// `(r_i - mean) / std` with the population standard deviation; all zeros
/// when the spread is below `std_floor`.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_floor {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Scores a batch made of groups: efficiency over the whole batch, then
/// rewards per `stage`, then advantages within each group.
pub fn score_batch(
    groups: &[Vec<(f64, u8)>],
    config: &RewardConfig,
    grpo: &GrpoConfig,
) -> Vec<Vec<GroupSample>> {
    let (costs, outcomes): (Vec<f64>, Vec<u8>) = groups.iter().flatten().copied().unzip();
    let efficiency = batch_efficiency_rewards(&costs, &outcomes, config);
    let mut eff = efficiency.into_iter();
    groups
        .iter()
        .map(|group| {
            let mut samples: Vec<GroupSample> = group
                .iter()
                .map(|&(cost, outcome)| {
                    let efficiency = eff.next().expect("one efficiency per trajectory");
                    GroupSample {
                        cost,
                        outcome,
                        efficiency,
                        reward: composite_reward(outcome, efficiency, config.stage),
                        advantage: 0.0,
                    }
                })
                .collect();
            let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
            for (s, a) in samples.iter_mut().zip(group_advantages(&rewards, grpo.std_floor)) {
                s.advantage = a;
            }
            samples
        })
        .collect()
}

pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Clipped surrogate `(1/G) sum_i [min(r A, clip(r, 1-eps, 1+eps) A) - beta kl]`.
pub fn grpo_surrogate(ratios: &[f64], advantages: &[f64], kl_terms: &[f64], config: &GrpoConfig) -> f64 {
    assert!(
        ratios.len() == advantages.len() && ratios.len() == kl_terms.len(),
        "ratios, advantages and kl_terms must have equal length"
    );
    if ratios.is_empty() {
        return 0.0;
    }
    let eps = config.clip_epsilon;
    let total: f64 = ratios
        .iter()
        .zip(advantages)
        .zip(kl_terms)
        .map(|((&r, &a), &kl)| {
            let unclipped = r * a;
            let clipped = clip(r, 1.0 - eps, 1.0 + eps) * a;
            unclipped.min(clipped) - config.kl_coefficient * kl
        })
        .sum();
    total / ratios.len() as f64
}

/// Non-negative KL estimator `rho - ln(rho) - 1` with
/// `ln(rho) = log_ref - log_policy`.
pub fn kl_estimate(log_ref: f64, log_policy: f64) -> f64 {
    let log_rho = log_ref - log_policy;
    log_rho.exp() - log_rho - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(g: &[&str]) -> Vec<String> {
        g.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("Paris."), "paris");
        assert_eq!(normalize_answer("The Beatles"), "beatles");
        assert_eq!(normalize_answer("  Justin   Spitzer "), "justin spitzer");
        assert_eq!(normalize_answer("theatre"), "theatre");
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(em_reward("Paris", &gold(&["Paris"])), 1);
        assert_eq!(em_reward("London", &gold(&["Paris"])), 0);
        assert_eq!(em_reward("george benson", &gold(&["George Benson"])), 1);
        assert_eq!(em_reward("x", &gold(&["y", "the X"])), 1);
    }

    #[test]
    fn f1_examples() {
        assert!((f1_score("Obama", &gold(&["Barack Obama"])) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_score("Justin Spitzer", &gold(&["Justin Spitzer"])), 1.0);
        assert_eq!(f1_score("kenny g", &gold(&["dave koz"])), 0.0);
        assert_eq!(f1_score("the", &gold(&["a"])), 1.0);
        assert_eq!(f1_score("", &gold(&["paris"])), 0.0);
    }

    #[test]
    fn efficiency_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(batch_efficiency_rewards(&[3.0; 4], &[1; 4], &cfg), vec![0.0; 4]);
        assert_eq!(
            batch_efficiency_rewards(&[2.0, 4.0, 6.0, 8.0], &[1, 1, 1, 1], &cfg),
            vec![0.1875, 0.0625, -0.0625, -0.1875]
        );
        assert_eq!(
            batch_efficiency_rewards(&[2.0, 4.0, 6.0, 8.0], &[1, 0, 0, 1], &cfg),
            vec![0.1875, 0.0, 0.0, -0.1875]
        );
        assert_eq!(batch_efficiency_rewards(&[0.0, 0.0], &[1, 1], &cfg), vec![0.0, 0.0]);
    }

    #[test]
    fn composite_examples() {
        assert_eq!(composite_reward(0, 0.4, Stage::Two), 0.0);
        assert_eq!(composite_reward(1, 0.0, Stage::Two), 1.0);
        assert_eq!(composite_reward(1, 0.1875, Stage::Two), 1.1875);
        assert_eq!(composite_reward(1, 0.4, Stage::One), 1.0);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[1.0; 5], 1e-8), vec![0.0; 5]);
        let got = group_advantages(&[1.0, 0.0, 0.0, 1.0, 0.0], 1e-8);
        let want = [1.2247, -0.8165, -0.8165, 1.2247, -0.8165];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-4, "{got:?}");
        }
    }

    #[test]
    fn surrogate_examples() {
        let cfg = GrpoConfig {
            kl_coefficient: 0.0,
            ..GrpoConfig::default()
        };
        assert!((grpo_surrogate(&[2.0], &[1.0], &[0.0], &cfg) - 1.2).abs() < 1e-15);
        assert!((grpo_surrogate(&[0.5], &[-1.0], &[0.0], &cfg) + 0.8).abs() < 1e-15);
        let adv = group_advantages(&[1.0, 0.0, 0.0, 1.0, 0.0], 1e-8);
        let s = grpo_surrogate(&[1.0; 5], &adv, &[0.0; 5], &GrpoConfig::default());
        assert!(s.abs() < 1e-15);
    }

    #[test]
    fn stage_parsing() {
        assert_eq!(Stage::try_from(2), Ok(Stage::Two));
        assert_eq!(Stage::try_from(3), Err(InvalidStage(3)));
        assert!(serde_json::from_str::<Stage>("3").is_err());
    }

    #[test]
    fn kl_estimate_is_nonnegative_and_zero_at_equality() {
        assert_eq!(kl_estimate(-1.2, -1.2), 0.0);
        for (a, b) in [(-0.1, -2.0), (-3.0, -0.5)] {
            assert!(kl_estimate(a, b) > 0.0);
        }
    }

    #[test]
    fn default_unit_costs_are_valid() {
        assert!(UnitCosts::default().is_valid());
        let bad = UnitCosts {
            passage: 1.0,
            graph: 1.0,
            hybrid: 5.0,
        };
        assert!(!bad.is_valid());
    }
}
