//! Desk-scale two-stage GRPO training of a tabular routing policy on a
//! synthetic retrieval environment.
//!
//! The simulator isolates the effect of reward shaping: stage 1 rewards
//! correct answers only, stage 2 adds the batch-centered efficiency bonus.
//! It does not model exploration through text, token masking or batch
//! composition effects of real language-model training.

mod env;
mod objective;
mod tabular;

use std::io::{self, Write};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::{GrpoConfig, RewardConfig, Stage};

pub use env::{
    rollout_group, Decision, FindProbability, PolicyEvaluation, QuestionType, SimAction, SimEnv,
    SimTrajectory, GRAPH_EVIDENCE, PASSAGE_EVIDENCE,
};
pub use objective::{grpo_update, surrogate_gradient, surrogate_objective, SurrogateGradient, UpdateStats};
pub use tabular::TabularPolicy;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("non-finite gradient (exploding logits)")]
    NonFiniteGradient,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub grpo: GrpoConfig,
    /// The stage field is overridden by the schedule.
    pub reward: RewardConfig,
    pub learning_rate: f64,
    /// Question groups sampled per update.
    pub groups_per_step: usize,
    /// Gradient steps per update, each over a slice of the groups.
    pub minibatches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            grpo: GrpoConfig::default(),
            reward: RewardConfig::default(),
            learning_rate: 2.0,
            groups_per_step: 16,
            minibatches: 2,
        }
    }
}

impl TrainConfig {
    fn validate(&self, env: &SimEnv) -> Result<(), TrainError> {
        env.validate().map_err(TrainError::InvalidConfig)?;
        if self.grpo.group_size < 2 {
            return Err(TrainError::InvalidConfig("group size must be at least 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning rate must be positive".into()));
        }
        if self.groups_per_step == 0 || self.minibatches == 0 {
            return Err(TrainError::InvalidConfig(
                "groups_per_step and minibatches must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRow {
    /// 1-based, counted across both stages.
    pub step: usize,
    pub stage: Stage,
    pub mean_reward: f64,
    pub batch_accuracy: f64,
    pub batch_mean_cost: f64,
    pub objective: f64,
    pub clipped_fraction: f64,
    /// Exact expectations under the updated policy.
    pub accuracy: f64,
    pub mean_turns: f64,
    pub mean_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportRecord {
    Update(UpdateRow),
    StageBoundary { after_step: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Evaluation of the untrained policy.
    pub baseline: PolicyEvaluation,
    pub records: Vec<ReportRecord>,
}

impl TrainReport {
    pub fn updates(&self) -> impl Iterator<Item = &UpdateRow> {
        self.records.iter().filter_map(|r| match r {
            ReportRecord::Update(u) => Some(u),
            ReportRecord::StageBoundary { .. } => None,
        })
    }

    pub fn last_update(&self, stage: Stage) -> Option<&UpdateRow> {
        self.updates().filter(|u| u.stage == stage).last()
    }

    /// One JSON object per line, in training order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d4_9bb1_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for stream `index` of `parent`. Update `k` of a run with seed
/// `s` uses `derive_seed(s, k)`; group `g` of that update uses
/// `derive_seed(derive_seed(s, k), g + 1)`, and stream 0 picks question types.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index)
}

fn run_stage(
    env: &SimEnv,
    config: &TrainConfig,
    stage: Stage,
    steps: usize,
    seed: u64,
    policy: &mut TabularPolicy,
    report: &mut TrainReport,
) -> Result<(), TrainError> {
    let reference = policy.clone();
    let reward = RewardConfig {
        stage,
        ..config.reward
    };
    let first = report.updates().count() + 1;
    for step in first..first + steps {
        let step_seed = derive_seed(seed, step as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, 0));
        let groups: Vec<Vec<SimTrajectory>> = (0..config.groups_per_step)
            .map(|g| {
                let qt = env.sample_question_type(&mut rng);
                rollout_group(env, policy, qt, config.grpo.group_size, derive_seed(step_seed, g as u64 + 1))
            })
            .collect();
        let stats = grpo_update(
            policy,
            &reference,
            &groups,
            &reward,
            &config.grpo,
            config.learning_rate,
            config.minibatches,
        )?;
        let eval = env.evaluate(policy);
        report.records.push(ReportRecord::Update(UpdateRow {
            step,
            stage,
            mean_reward: stats.mean_reward,
            batch_accuracy: stats.batch_accuracy,
            batch_mean_cost: stats.batch_mean_cost,
            objective: stats.objective,
            clipped_fraction: stats.clipped_fraction,
            accuracy: eval.accuracy,
            mean_turns: eval.mean_turns,
            mean_cost: eval.mean_cost,
        }));
    }
    Ok(())
}

/// Trains a fresh uniform policy for `steps` updates of a single stage.
pub fn train_stage(
    env: &SimEnv,
    config: &TrainConfig,
    stage: Stage,
    steps: usize,
    seed: u64,
) -> Result<(TabularPolicy, TrainReport), TrainError> {
    config.validate(env)?;
    let mut policy = TabularPolicy::uniform(env.state_count());
    let mut report = TrainReport {
        baseline: env.evaluate(&policy),
        records: Vec::new(),
    };
    run_stage(env, config, stage, steps, seed, &mut policy, &mut report)?;
    Ok((policy, report))
}

/// Stage 1 (correctness reward) followed by stage 2 (correctness plus
/// efficiency). The KL reference is reset to the current policy at the start
/// of each stage. With `stage2_steps == 0` the result equals stage-1-only
/// training and no boundary is recorded.
pub fn train_two_stage(
    env: &SimEnv,
    config: &TrainConfig,
    stage1_steps: usize,
    stage2_steps: usize,
    seed: u64,
) -> Result<(TabularPolicy, TrainReport), TrainError> {
    if stage1_steps == 0 {
        return Err(TrainError::InvalidConfig("stage 1 needs at least one step".into()));
    }
    let (mut policy, mut report) = train_stage(env, config, Stage::One, stage1_steps, seed)?;
    if stage2_steps > 0 {
        report.records.push(ReportRecord::StageBoundary {
            after_step: stage1_steps,
        });
        run_stage(env, config, Stage::Two, stage2_steps, seed, &mut policy, &mut report)?;
    }
    Ok((policy, report))
}
