//! Clipped group-relative surrogate over sampled decisions, its analytic
//! gradient with respect to the policy logits, and the update step.
//!
//! For a batch of groups the objective is
//!
//! ```text
//! J = mean over groups of (1/G) sum_i (1/|y_i|) sum_t
//!       [ min(r_t A_i, clip(r_t, 1-eps, 1+eps) A_i) - beta k_t ]
//! r_t = pi(a_t|s_t) / pi_old(a_t|s_t)
//! k_t = q - ln q - 1,  q = pi_ref(a_t|s_t) / pi(a_t|s_t)
//! ```

use serde::{Deserialize, Serialize};

use crate::reward::{clip, grpo_surrogate, kl_estimate, score_batch, GrpoConfig, RewardConfig};

use super::env::{SimAction, SimTrajectory};
use super::tabular::TabularPolicy;
use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGradient {
    pub objective: f64,
    /// Same layout as [`TabularPolicy::logits`].
    pub gradient: Vec<f64>,
    pub decisions: usize,
    /// Decisions whose ratio was outside the clip range.
    pub out_of_range: usize,
    /// Decisions where the clipped branch was selected and the
    /// policy-gradient contribution vanished.
    pub clipped: usize,
}

fn check_shapes(groups: &[Vec<SimTrajectory>], advantages: &[Vec<f64>]) {
    assert_eq!(groups.len(), advantages.len(), "one advantage vector per group");
    for (g, a) in groups.iter().zip(advantages) {
        assert_eq!(g.len(), a.len(), "one advantage per trajectory");
    }
}

/// Evaluates the surrogate through the per-trajectory reward-module
/// primitives. Independent of [`surrogate_gradient`].
pub fn surrogate_objective(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    groups: &[Vec<SimTrajectory>],
    advantages: &[Vec<f64>],
    grpo: &GrpoConfig,
) -> f64 {
    check_shapes(groups, advantages);
    let mut total = 0.0;
    let mut counted = 0usize;
    for (group, adv) in groups.iter().zip(advantages) {
        if group.is_empty() {
            continue;
        }
        let mut group_total = 0.0;
        for (t, &a) in group.iter().zip(adv) {
            let mut ratios = Vec::with_capacity(t.decisions.len());
            let mut kls = Vec::with_capacity(t.decisions.len());
            for d in &t.decisions {
                let lp = policy.log_probability(d.state, d.action.index());
                ratios.push((lp - d.old_log_prob).exp());
                kls.push(kl_estimate(reference.log_probability(d.state, d.action.index()), lp));
            }
            let advs = vec![a; ratios.len()];
            group_total += grpo_surrogate(&ratios, &advs, &kls, grpo);
        }
        total += group_total / group.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Objective and its exact gradient with respect to every logit.
///
/// With `d log pi(a|s) / d theta[s,b] = 1[a=b] - pi(b|s)`, a decision adds
/// `A r grad log pi` when the unclipped branch is the minimum (nothing when
/// the clipped constant is) and `beta (q - 1) grad log pi` from the KL term.
pub fn surrogate_gradient(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    groups: &[Vec<SimTrajectory>],
    advantages: &[Vec<f64>],
    grpo: &GrpoConfig,
) -> SurrogateGradient {
    check_shapes(groups, advantages);
    let eps = grpo.clip_epsilon;
    let beta = grpo.kl_coefficient;
    let mut out = SurrogateGradient {
        objective: 0.0,
        gradient: vec![0.0; policy.logits().len()],
        decisions: 0,
        out_of_range: 0,
        clipped: 0,
    };
    let non_empty = groups.iter().filter(|g| !g.is_empty()).count();
    if non_empty == 0 {
        return out;
    }
    for (group, adv) in groups.iter().zip(advantages) {
        if group.is_empty() {
            continue;
        }
        for (t, &a) in group.iter().zip(adv) {
            if t.decisions.is_empty() {
                continue;
            }
            let weight = 1.0 / (non_empty as f64 * group.len() as f64 * t.decisions.len() as f64);
            for d in &t.decisions {
                let action = d.action.index();
                let lp = policy.log_probability(d.state, action);
                let r = (lp - d.old_log_prob).exp();
                let log_q = reference.log_probability(d.state, action) - lp;
                let q = log_q.exp();

                let unclipped = r * a;
                let clipped = clip(r, 1.0 - eps, 1.0 + eps) * a;
                let outside = (r - 1.0).abs() > eps;
                out.decisions += 1;
                out.out_of_range += usize::from(outside);
                let pg = if unclipped <= clipped || !outside {
                    a * r
                } else {
                    out.clipped += 1;
                    0.0
                };
                out.objective += weight * (unclipped.min(clipped) - beta * (q - log_q - 1.0));

                let coeff = weight * (pg + beta * (q - 1.0));
                if coeff == 0.0 {
                    continue;
                }
                let probs = policy.probabilities(d.state);
                let base = d.state * SimAction::COUNT;
                for (b, p) in probs.iter().enumerate() {
                    let indicator = if b == action { 1.0 } else { 0.0 };
                    out.gradient[base + b] += coeff * (indicator - p);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean_reward: f64,
    pub batch_accuracy: f64,
    pub batch_mean_turns: f64,
    pub batch_mean_cost: f64,
    /// Surrogate over the whole batch at the updated policy.
    pub objective: f64,
    pub clipped_fraction: f64,
}

/// Scores the batch, then takes one gradient-ascent step per minibatch of
/// groups. Every step uses the sampling policy's stored log-probabilities as
/// the ratio denominator, so ratios start at 1 and drift in later
/// minibatches.
pub fn grpo_update(
    policy: &mut TabularPolicy,
    reference: &TabularPolicy,
    groups: &[Vec<SimTrajectory>],
    reward: &RewardConfig,
    grpo: &GrpoConfig,
    learning_rate: f64,
    minibatches: usize,
) -> Result<UpdateStats, TrainError> {
    if groups.is_empty() || groups.iter().all(Vec::is_empty) {
        return Err(TrainError::InvalidConfig("grpo_update needs at least one trajectory".into()));
    }
    let scored_input: Vec<Vec<(f64, u8)>> = groups
        .iter()
        .map(|g| g.iter().map(|t| (t.cost, t.outcome())).collect())
        .collect();
    let scored = score_batch(&scored_input, reward, grpo);
    let advantages: Vec<Vec<f64>> = scored
        .iter()
        .map(|g| g.iter().map(|s| s.advantage).collect())
        .collect();

    let chunk = groups.len().div_ceil(minibatches.clamp(1, groups.len()));
    let mut decisions = 0;
    let mut clipped = 0;
    for (gs, adv) in groups.chunks(chunk).zip(advantages.chunks(chunk)) {
        let step = surrogate_gradient(policy, reference, gs, adv, grpo);
        if step.gradient.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient);
        }
        policy.apply_gradient(&step.gradient, learning_rate);
        decisions += step.decisions;
        clipped += step.clipped;
    }

    let all: Vec<&SimTrajectory> = groups.iter().flatten().collect();
    let n = all.len() as f64;
    let rewards = scored.iter().flatten().map(|s| s.reward);
    Ok(UpdateStats {
        mean_reward: rewards.sum::<f64>() / n,
        batch_accuracy: all.iter().filter(|t| t.correct).count() as f64 / n,
        batch_mean_turns: all.iter().map(|t| t.retrieval_turns as f64).sum::<f64>() / n,
        batch_mean_cost: all.iter().map(|t| t.cost).sum::<f64>() / n,
        objective: surrogate_objective(policy, reference, groups, &advantages, grpo),
        clipped_fraction: if decisions == 0 {
            0.0
        } else {
            clipped as f64 / decisions as f64
        },
    })
}
