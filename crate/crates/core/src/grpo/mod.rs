//! Group relative policy optimization primitives.
//!
//! A group of `G` responses to one prompt is scored, rewards are
//! standardized within the group, and the policy maximizes
//!
//! ```text
//! J = (1/G) Σ_i min(ρ_i A_i, clip(ρ_i, 1−ε, 1+ε) A_i) − β · KL(π_θ ‖ π_ref)
//! ```
//!
//! with `ρ_i = π_θ(o_i) / π_old(o_i)`. The KL term is applied once per group.

mod reward;
mod toy;

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};

pub use reward::{extract_answer, is_well_formed, render_response, rule_based_reward, RewardBreakdown, ResponseStyle};
pub use toy::{
    train_toy_policy, train_toy_policy_with, CurvePoint, LearningCurve, McqBank, McqQuestion, ToyPolicy,
    ToyTrainerConfig,
};

pub const DEFAULT_GROUP_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub epsilon: f64,
    pub beta: f64,
    #[serde(rename = "g")]
    pub group_size: usize,
    pub std_floor: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            epsilon: 0.2,
            beta: 0.02,
            group_size: DEFAULT_GROUP_SIZE,
            std_floor: 1e-8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(OmniError::config("epsilon", "must lie in (0, 1)"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(OmniError::config("beta", "must be finite and >= 0"));
        }
        if self.group_size == 0 {
            return Err(OmniError::config("g", "group size must be >= 1"));
        }
        if !(self.std_floor > 0.0 && self.std_floor.is_finite()) {
            return Err(OmniError::config("std_floor", "must be positive and finite"));
        }
        Ok(())
    }
}

/// One prompt's rollouts with their rewards and per-response probabilities
/// under the current, behaviour and reference policies.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub responses: Vec<String>,
    pub rewards: Vec<f64>,
    pub p_new: Vec<f64>,
    pub p_old: Vec<f64>,
    pub p_ref: Vec<f64>,
}

impl RolloutGroup {
    pub fn g(&self) -> usize {
        self.rewards.len()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.rewards.len();
        if g == 0 {
            return Err(OmniError::EmptyInput);
        }
        for len in [self.responses.len(), self.p_new.len(), self.p_old.len(), self.p_ref.len()] {
            if len != g {
                return Err(OmniError::DimensionMismatch { expected: g, actual: len });
            }
        }
        for probs in [&self.p_new, &self.p_old, &self.p_ref] {
            if let Some((index, &value)) = probs.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p <= 1.0)) {
                return Err(OmniError::InvalidProbability { index, value });
            }
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(OmniError::config("rewards", "non-finite reward"));
        }
        Ok(())
    }
}

/// `A_i = (r_i − mean) / max(popstd, std_floor)`.
pub fn normalize_advantages(rewards: &[f64], std_floor: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let std = var.sqrt().max(std_floor);
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)`
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(OmniError::InvalidRatio(ratio));
    }
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    Ok((ratio * advantage).min(clipped * advantage))
}

/// `∂ clipped_term / ∂ρ`: `A` where the unclipped branch is selected, else 0.
pub fn clipped_term_slope(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

/// Exact `Σ p ln(p / q)` over a shared finite support.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(OmniError::SupportMismatch(p.len(), q.len()));
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if !(pi >= 0.0) {
            return Err(OmniError::InvalidProbability { index: i, value: pi });
        }
        if pi == 0.0 {
            continue;
        }
        if !(qi > 0.0) {
            return Err(OmniError::ZeroReference(i));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl)
}

pub fn grpo_objective(group: &RolloutGroup, cfg: &GrpoConfig, kl_value: f64) -> Result<f64> {
    group.validate()?;
    if !(kl_value >= 0.0) {
        return Err(OmniError::config("kl_value", "must be >= 0"));
    }
    let adv = normalize_advantages(&group.rewards, cfg.std_floor);
    let mut total = 0.0;
    for ((p_new, p_old), a) in group.p_new.iter().zip(&group.p_old).zip(&adv) {
        total += clipped_term(p_new / p_old, *a, cfg.epsilon)?;
    }
    Ok(total / group.g() as f64 - cfg.beta * kl_value)
}
