//! PPO training with GAE, the adapter and gating losses, motion sampling,
//! stagnation detection and the expert lifecycle.

mod run;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::ClipLibrary;

pub use run::{
    loss_and_grad, gating_loss_and_grad, CompletedExpert, IterationMetrics, LossBreakdown, Sample, Trainer, TrainerState,
    Transition, Trajectory, CURVE_COLUMNS,
};

/// How clips are drawn for new episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    Uniform,
    Duration,
    SuccessRate,
    TrackingReward,
}

impl SamplingStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SamplingStrategy::Uniform => "uniform",
            SamplingStrategy::Duration => "duration",
            SamplingStrategy::SuccessRate => "success-rate",
            SamplingStrategy::TrackingReward => "tracking-reward",
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SamplingStrategy::Uniform,
            SamplingStrategy::Duration,
            SamplingStrategy::SuccessRate,
            SamplingStrategy::TrackingReward,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| Error::Input(format!("unknown sampling strategy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Candidate episodes drawn per iteration, before routing.
    pub episodes_per_iteration: usize,
    pub learning_rate: f64,
    pub gating_learning_rate: f64,
    pub adapter_loss_weight: f64,
    pub entropy_coef: f64,
    pub sampling: SamplingStrategy,
    pub temperature: f64,
    pub stagnation_window: usize,
    pub stagnation_delta: f64,
    /// Hard cap on iterations spent on one expert; 0 disables it.
    pub max_iterations_per_expert: usize,
    /// Route only low-confidence candidates to a newly activated expert.
    pub progressive_sampling: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Rollout threads; 0 picks the machine's parallelism.
    pub workers: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_epsilon: 0.2,
            epochs: 4,
            minibatch_size: 256,
            episodes_per_iteration: 16,
            learning_rate: 3e-4,
            gating_learning_rate: 1e-3,
            adapter_loss_weight: 0.03,
            entropy_coef: 0.0,
            sampling: SamplingStrategy::TrackingReward,
            temperature: 0.2,
            stagnation_window: 50,
            stagnation_delta: 0.01,
            max_iterations_per_expert: 0,
            progressive_sampling: true,
            log_std_min: -3.0,
            log_std_max: 0.5,
            workers: 0,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be positive");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.episodes_per_iteration == 0 || self.stagnation_window == 0 {
            return bad("epochs, minibatch_size, episodes_per_iteration and stagnation_window must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.gating_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.adapter_loss_weight >= 0.0) || !(self.entropy_coef >= 0.0) || !(self.stagnation_delta >= 0.0) {
            return bad("loss weights and stagnation_delta must be nonnegative");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max");
        }
        Ok(())
    }
}

fn softmax_neg(scores: &[f64], temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = scores.iter().map(|s| -s / temperature).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-clip sampling probabilities.
pub fn sampling_probs(library: &ClipLibrary, strategy: SamplingStrategy, temperature: f64) -> Result<Vec<f64>> {
    if library.is_empty() {
        return Err(Error::Input("clip library is empty".into()));
    }
    let n = library.len();
    match strategy {
        SamplingStrategy::Uniform => Ok(vec![1.0 / n as f64; n]),
        SamplingStrategy::Duration => {
            let total: f64 = library.stats.iter().map(|s| s.duration).sum();
            if !(total > 0.0) {
                return Err(Error::Input("clip durations sum to zero".into()));
            }
            Ok(library.stats.iter().map(|s| s.duration / total).collect())
        }
        SamplingStrategy::SuccessRate | SamplingStrategy::TrackingReward => {
            if !(temperature > 0.0) {
                return Err(Error::Input(format!("temperature {temperature} must be positive")));
            }
            let scores: Vec<f64> = library
                .stats
                .iter()
                .map(|s| {
                    if strategy == SamplingStrategy::SuccessRate {
                        s.success_fraction()
                    } else {
                        s.mean_reward
                    }
                })
                .collect();
            Ok(softmax_neg(&scores, temperature))
        }
    }
}

/// Generalized advantage estimates and value targets for one trajectory.
/// `values` holds one estimate per step plus the bootstrap value of the
/// state after the last step (zero after a termination).
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::Shape(format!(
            "{} rewards need {} values including the bootstrap, got {}",
            rewards.len(),
            rewards.len() + 1,
            values.len()
        )));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Shifts and scales to mean 0, std 1. A single value becomes 0.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Clipped surrogate objective of one sample (to be maximized) and its
/// derivative with respect to the ratio.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

/// PPO policy and value losses over a batch.
pub fn ppo_losses(ratios: &[f64], advantages: &[f64], values: &[f64], targets: &[f64], epsilon: f64) -> Result<(f64, f64)> {
    if ratios.len() != advantages.len() || values.len() != targets.len() || ratios.is_empty() || values.is_empty() {
        return Err(Error::Shape("ppo_losses needs equal, nonempty batches".into()));
    }
    let lp = -ratios
        .iter()
        .zip(advantages)
        .map(|(r, a)| clipped_surrogate(*r, *a, epsilon).0)
        .sum::<f64>()
        / ratios.len() as f64;
    let lv = values.iter().zip(targets).map(|(v, t)| (v - t).powi(2)).sum::<f64>() / values.len() as f64;
    Ok((lp, lv))
}

/// Euclidean norm of the confidence residuals.
pub fn gating_loss(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape("gating predictions and targets differ in length".into()));
    }
    Ok(predicted.iter().zip(actual).map(|(p, a)| (a - p).powi(2)).sum::<f64>().sqrt())
}

/// Adapter loss weight of the combined objective.
pub const ADAPTER_LOSS_WEIGHT: f64 = 0.03;

/// `L_policy + L_value + 0.03 L_adapter`.
pub fn total_loss(policy: f64, value: f64, adapter: f64) -> Result<f64> {
    weighted_total_loss(policy, value, adapter, ADAPTER_LOSS_WEIGHT)
}

pub fn weighted_total_loss(policy: f64, value: f64, adapter: f64, adapter_weight: f64) -> Result<f64> {
    if !(policy.is_finite() && value.is_finite() && adapter.is_finite()) {
        return Err(Error::Numeric(format!("loss components ({policy}, {value}, {adapter})")));
    }
    Ok(policy + value + adapter_weight * adapter)
}

/// True once the mean of the last `window` entries improves on the mean of
/// the window before it by less than `delta` (relative). Needs more than
/// `window` entries; the earlier window may be shorter than `window`.
pub fn stagnation_check(history: &[f64], window: usize, delta: f64) -> bool {
    let n = history.len();
    if window == 0 || n <= window {
        return false;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let current = mean(&history[n - window..]);
    let previous = mean(&history[n.saturating_sub(2 * window)..n - window]);
    (current - previous) / previous.abs().max(1e-12) < delta
}
