//! Softmax policy with one logit per (state, action).

use serde::{Deserialize, Serialize};

use super::env::SimAction;

const ACTIONS: usize = SimAction::COUNT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    /// Row-major `state * ACTIONS + action`.
    logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(states: usize) -> Self {
        Self {
            logits: vec![0.0; states * ACTIONS],
        }
    }

    pub fn from_logits(logits: Vec<f64>) -> Self {
        assert!(logits.len().is_multiple_of(ACTIONS), "logit count must be a multiple of {ACTIONS}");
        Self { logits }
    }

    pub fn state_count(&self) -> usize {
        self.logits.len() / ACTIONS
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn state_logits(&self, state: usize) -> &[f64] {
        &self.logits[state * ACTIONS..(state + 1) * ACTIONS]
    }

    pub fn set_state_logits(&mut self, state: usize, logits: [f64; ACTIONS]) {
        self.logits[state * ACTIONS..(state + 1) * ACTIONS].copy_from_slice(&logits);
    }

    pub fn probabilities(&self, state: usize) -> [f64; ACTIONS] {
        let row = self.state_logits(state);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = [0.0; ACTIONS];
        let mut total = 0.0;
        for (o, &l) in out.iter_mut().zip(row) {
            *o = (l - max).exp();
            total += *o;
        }
        for o in &mut out {
            *o /= total;
        }
        out
    }

    pub fn log_probability(&self, state: usize, action: usize) -> f64 {
        let row = self.state_logits(state);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row[action] - lse
    }

    /// Gradient ascent step `logits += lr * gradient`.
    pub fn apply_gradient(&mut self, gradient: &[f64], learning_rate: f64) {
        assert_eq!(gradient.len(), self.logits.len(), "gradient shape mismatch");
        for (l, g) in self.logits.iter_mut().zip(gradient) {
            *l += learning_rate * g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_normalized_and_stable() {
        let mut p = TabularPolicy::uniform(2);
        p.set_state_logits(1, [1000.0, 999.0, -1000.0, 0.0]);
        for s in 0..2 {
            let probs = p.probabilities(s);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, pr) in probs.iter().enumerate() {
                if *pr > 0.0 {
                    assert!((p.log_probability(s, a) - pr.ln()).abs() < 1e-12);
                }
            }
        }
        assert_eq!(p.probabilities(0), [0.25; 4]);
        assert!((p.log_probability(1, 0) - (-(1.0 + (-1.0f64).exp()).ln())).abs() < 1e-12);
    }
}
