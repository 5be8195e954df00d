//! A toy multiple-choice task for exercising the GRPO objective end to end.
//!
//! The policy is an explicit categorical distribution over responses
//! `(style, option)`, factorized as `π(style) · π(option | question)`: one
//! shared style head and one row of option logits per question. Rewards
//! come from [`rule_based_reward`] on the rendered text, so the style head
//! learns the format reward and the option rows learn accuracy.

use serde::{Deserialize, Serialize};

use super::reward::{render_response, rule_based_reward, ResponseStyle, RewardBreakdown};
use super::{categorical_kl, clipped_term_slope, grpo_objective, normalize_advantages, GrpoConfig, RolloutGroup};
use crate::error::{OmniError, Result};
use crate::numerics::{softmax, Matrix, SeededRng, Vector};
use crate::parallel::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTrainerConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub g: usize,
    pub std_floor: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub questions: usize,
    pub options: usize,
    /// Gradient steps taken on each batch of rollouts.
    pub inner_updates: usize,
    pub seed: u64,
}

impl Default for ToyTrainerConfig {
    fn default() -> Self {
        let g = GrpoConfig::default();
        ToyTrainerConfig {
            epsilon: g.epsilon,
            beta: g.beta,
            g: g.group_size,
            std_floor: g.std_floor,
            steps: 200,
            learning_rate: 2.0,
            questions: 16,
            options: 4,
            inner_updates: 2,
            seed: 0,
        }
    }
}

impl ToyTrainerConfig {
    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            epsilon: self.epsilon,
            beta: self.beta,
            group_size: self.g,
            std_floor: self.std_floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grpo().validate()?;
        if self.steps == 0 {
            return Err(OmniError::config("steps", "must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(OmniError::config("learning_rate", "must be finite and >= 0"));
        }
        if self.questions == 0 {
            return Err(OmniError::config("questions", "must be >= 1"));
        }
        if !(2..=26).contains(&self.options) {
            return Err(OmniError::config("options", "must lie in 2..=26"));
        }
        if self.inner_updates == 0 {
            return Err(OmniError::config("inner_updates", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McqQuestion {
    pub labels: Vec<String>,
    pub correct: usize,
}

impl McqQuestion {
    pub fn key(&self) -> &str {
        &self.labels[self.correct]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McqBank {
    pub questions: Vec<McqQuestion>,
}

impl McqBank {
    /// `questions` items with options labelled `A, B, …` and a uniformly
    /// drawn correct option.
    pub fn synthetic(questions: usize, options: usize, rng: &mut SeededRng) -> Self {
        let labels: Vec<String> = (0..options).map(|i| char::from(b'A' + i as u8).to_string()).collect();
        McqBank {
            questions: (0..questions)
                .map(|_| McqQuestion {
                    labels: labels.clone(),
                    correct: rng.below(options),
                })
                .collect(),
        }
    }

    pub fn options(&self) -> usize {
        self.questions.first().map_or(0, |q| q.labels.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    style_logits: Vector,
    option_logits: Matrix,
}

impl ToyPolicy {
    pub fn uniform(questions: usize, options: usize) -> Self {
        ToyPolicy {
            style_logits: Vector::zeros(ResponseStyle::ALL.len()),
            option_logits: Matrix::zeros(questions, options),
        }
    }

    pub fn style_probs(&self) -> Vector {
        softmax(&self.style_logits).expect("two styles")
    }

    pub fn option_probs(&self, question: usize) -> Vector {
        softmax(self.option_logits.row(question)).expect("at least two options")
    }

    pub fn prob(&self, question: usize, style: usize, option: usize) -> f64 {
        self.style_probs()[style] * self.option_probs(question)[option]
    }

    /// Exact KL to `reference` for one question; the factorization makes it
    /// the sum of the style and option KLs.
    pub fn kl(&self, reference: &ToyPolicy, question: usize) -> Result<f64> {
        Ok(categorical_kl(&self.style_probs(), &reference.style_probs())?
            + categorical_kl(&self.option_probs(question), &reference.option_probs(question))?)
    }

    /// Expected accuracy reward under the policy, averaged over questions.
    pub fn expected_accuracy(&self, bank: &McqBank) -> f64 {
        let n = bank.questions.len() as f64;
        bank.questions
            .iter()
            .enumerate()
            .map(|(q, item)| self.option_probs(q)[item.correct])
            .sum::<f64>()
            / n
    }

    pub fn expected_format(&self) -> f64 {
        self.style_probs()[0]
    }

    pub fn params(&self) -> Vec<f64> {
        self.style_logits.iter().chain(self.option_logits.data()).copied().collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let s = self.style_logits.dim();
        self.style_logits.copy_from_slice(&params[..s]);
        self.option_logits.data_mut().copy_from_slice(&params[s..]);
    }
}

/// Rollouts of one question: `(style, option)` picks and their rewards.
#[derive(Debug, Clone)]
struct SampledGroup {
    question: usize,
    picks: Vec<(usize, usize)>,
    responses: Vec<String>,
    rewards: Vec<RewardBreakdown>,
    advantages: Vec<f64>,
}

fn sample_group(
    policy: &ToyPolicy,
    bank: &McqBank,
    question: usize,
    g: usize,
    std_floor: f64,
    rng: &mut SeededRng,
) -> SampledGroup {
    let style_p = policy.style_probs();
    let option_p = policy.option_probs(question);
    let item = &bank.questions[question];
    let mut picks = Vec::with_capacity(g);
    let mut responses = Vec::with_capacity(g);
    let mut rewards = Vec::with_capacity(g);
    for _ in 0..g {
        let s = rng.categorical(&style_p);
        let o = rng.categorical(&option_p);
        let text = render_response(ResponseStyle::ALL[s], &item.labels[o]);
        rewards.push(rule_based_reward(&text, item.key()));
        responses.push(text);
        picks.push((s, o));
    }
    let totals: Vec<f64> = rewards.iter().map(RewardBreakdown::total).collect();
    SampledGroup {
        question,
        picks,
        responses,
        advantages: normalize_advantages(&totals, std_floor),
        rewards,
    }
}

fn rollout_group(group: &SampledGroup, new: &ToyPolicy, old: &ToyPolicy, reference: &ToyPolicy) -> RolloutGroup {
    let q = group.question;
    let prob = |p: &ToyPolicy| group.picks.iter().map(|&(s, o)| p.prob(q, s, o)).collect();
    RolloutGroup {
        responses: group.responses.clone(),
        rewards: group.rewards.iter().map(RewardBreakdown::total).collect(),
        p_new: prob(new),
        p_old: prob(old),
        p_ref: prob(reference),
    }
}

/// Mean GRPO objective over the groups of one step and its gradient with
/// respect to the logits of `new` (laid out as [`ToyPolicy::params`]).
fn surrogate_and_grad(
    new: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[SampledGroup],
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<f64>)> {
    let n_groups = groups.len() as f64;
    let styles = new.style_logits.dim();
    let options = new.option_logits.cols();
    let mut grad = vec![0.0; new.params().len()];
    let mut objective = 0.0;

    let style_new = new.style_probs();
    let style_ref = reference.style_probs();
    let style_kl = categorical_kl(&style_new, &style_ref)?;

    for group in groups {
        let q = group.question;
        let rollout = rollout_group(group, new, old, reference);
        objective += grpo_objective(&rollout, cfg, new.kl(reference, q)?)? / n_groups;

        let option_new = new.option_probs(q);
        let option_ref = reference.option_probs(q);
        let g = group.picks.len() as f64;
        let row = styles + q * options;
        for (i, &(s, o)) in group.picks.iter().enumerate() {
            let p_new = rollout.p_new[i];
            let p_old = rollout.p_old[i];
            let slope = clipped_term_slope(p_new / p_old, group.advantages[i], cfg.epsilon);
            if slope == 0.0 {
                continue;
            }
            // ∂p/∂z = p (1[k = pick] − prob_k) for each softmax factor
            let coef = slope * p_new / p_old / g / n_groups;
            for k in 0..styles {
                grad[k] += coef * (f64::from(u8::from(k == s)) - style_new[k]);
            }
            for k in 0..options {
                grad[row + k] += coef * (f64::from(u8::from(k == o)) - option_new[k]);
            }
        }

        // −β KL: ∂KL/∂z_k = p_k (ln(p_k / r_k) − KL)
        let option_kl = categorical_kl(&option_new, &option_ref)?;
        for k in 0..options {
            let d = option_new[k] * ((option_new[k] / option_ref[k]).ln() - option_kl);
            grad[row + k] -= cfg.beta * d / n_groups;
        }
        for k in 0..styles {
            let d = style_new[k] * ((style_new[k] / style_ref[k]).ln() - style_kl);
            grad[k] -= cfg.beta * d / n_groups;
        }
    }
    Ok((objective, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean accuracy component over this step's rollouts.
    pub mean_accuracy_reward: f64,
    /// Mean format component over this step's rollouts.
    pub mean_format_reward: f64,
    /// GRPO objective after this step's update.
    pub objective: f64,
    pub expected_accuracy: f64,
    pub expected_format: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub const CSV_HEADER: &'static str = "step,mean_accuracy_reward,mean_format_reward,objective";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.step, p.mean_accuracy_reward, p.mean_format_reward, p.objective
            ));
        }
        out
    }

    /// First step whose sampled metric reaches `threshold`.
    pub fn first_step_reaching(&self, threshold: f64, metric: impl Fn(&CurvePoint) -> f64) -> Option<usize> {
        self.points.iter().find(|p| metric(p) >= threshold).map(|p| p.step)
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }
}

pub fn train_toy_policy(cfg: &ToyTrainerConfig) -> Result<(ToyPolicy, LearningCurve)> {
    train_toy_policy_with(cfg, Execution::default())
}

/// Runs `cfg.steps` GRPO steps. Rollouts are sampled question-parallel
/// from per-question RNG streams; the update is applied afterwards on one
/// thread, so results do not depend on `exec`.
pub fn train_toy_policy_with(cfg: &ToyTrainerConfig, exec: Execution) -> Result<(ToyPolicy, LearningCurve)> {
    cfg.validate()?;
    let grpo = cfg.grpo();
    let root = SeededRng::new(cfg.seed);
    let bank = McqBank::synthetic(cfg.questions, cfg.options, &mut root.stream(u64::MAX));
    let reference = ToyPolicy::uniform(cfg.questions, cfg.options);
    let mut policy = reference.clone();
    let mut curve = LearningCurve::default();

    for step in 0..cfg.steps {
        let old = policy.clone();
        let groups = exec.map(cfg.questions, |q| {
            let mut rng = root.stream((step * cfg.questions + q) as u64);
            sample_group(&old, &bank, q, cfg.g, cfg.std_floor, &mut rng)
        });

        let mut objective = 0.0;
        for _ in 0..cfg.inner_updates {
            let (_, grad) = surrogate_and_grad(&policy, &old, &reference, &groups, &grpo)?;
            let mut params = policy.params();
            for (p, g) in params.iter_mut().zip(&grad) {
                *p += cfg.learning_rate * g;
            }
            policy.set_params(&params);
            objective = surrogate_and_grad(&policy, &old, &reference, &groups, &grpo)?.0;
        }
        if !objective.is_finite() {
            return Err(OmniError::Diverged { step, loss: objective });
        }

        let n = (cfg.questions * cfg.g) as f64;
        let rewards = groups.iter().flat_map(|g| g.rewards.iter());
        let (acc, fmt) = rewards.fold((0.0, 0.0), |(a, f), r| (a + r.accuracy, f + r.format));
        curve.points.push(CurvePoint {
            step,
            mean_accuracy_reward: acc / n,
            mean_format_reward: fmt / n,
            objective,
            expected_accuracy: policy.expected_accuracy(&bank),
            expected_format: policy.expected_format(),
        });
    }
    Ok((policy, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error};

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let cfg = GrpoConfig::default();
        let mut rng = SeededRng::new(4);
        let bank = McqBank::synthetic(3, 4, &mut rng);
        let reference = ToyPolicy::uniform(3, 4);
        let mut old = reference.clone();
        old.set_params(&rng.gaussian_vec(old.params().len(), 0.5));
        let groups: Vec<_> = (0..3).map(|q| sample_group(&old, &bank, q, 8, 1e-8, &mut rng)).collect();

        // inside the clip band the objective is smooth
        let mut new = old.clone();
        let near: Vec<f64> = old.params().iter().map(|p| p + 0.01 * rng.gaussian()).collect();
        new.set_params(&near);
        let (_, analytic) = surrogate_and_grad(&new, &old, &reference, &groups, &cfg).unwrap();
        let f = |x: &[f64]| {
            let mut p = new.clone();
            p.set_params(x);
            surrogate_and_grad(&p, &old, &reference, &groups, &cfg).unwrap().0
        };
        let numeric = finite_diff_grad(f, &near, 1e-6).unwrap();
        assert!(relative_error(&numeric, &analytic) < 1e-6, "{numeric:?} vs {analytic:?}");
    }

    #[test]
    fn uniform_start_is_at_chance() {
        let policy = ToyPolicy::uniform(16, 4);
        let mut rng = SeededRng::new(12);
        let bank = McqBank::synthetic(16, 4, &mut rng);
        let mut correct = 0.0;
        let mut total = 0.0;
        for q in 0..16 {
            let g = sample_group(&policy, &bank, q, 63, 1e-8, &mut rng);
            correct += g.rewards.iter().map(|r| r.accuracy).sum::<f64>();
            total += g.rewards.len() as f64;
        }
        assert!(total >= 1000.0);
        assert!((correct / total - 0.25).abs() < 0.05);
        assert_eq!(policy.expected_accuracy(&bank), 0.25);
    }

    #[test]
    fn zero_learning_rate_keeps_policy() {
        let cfg = ToyTrainerConfig {
            learning_rate: 0.0,
            steps: 20,
            ..ToyTrainerConfig::default()
        };
        let (policy, curve) = train_toy_policy(&cfg).unwrap();
        assert_eq!(policy, ToyPolicy::uniform(cfg.questions, cfg.options));
        for p in &curve.points {
            assert_eq!(p.expected_accuracy, 0.25);
            assert_eq!(p.expected_format, 0.5);
        }
    }

    #[test]
    fn execution_strategies_agree() {
        let cfg = ToyTrainerConfig {
            steps: 15,
            ..ToyTrainerConfig::default()
        };
        let a = train_toy_policy_with(&cfg, Execution::Sequential).unwrap();
        let b = train_toy_policy_with(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_layout() {
        let cfg = ToyTrainerConfig {
            steps: 3,
            ..ToyTrainerConfig::default()
        };
        let (_, curve) = train_toy_policy(&cfg).unwrap();
        let csv = curve.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], LearningCurve::CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
        assert_eq!(lines[3].split(',').count(), 4);
    }

    #[test]
    fn config_rejects_bad_values() {
        for bad in [
            ToyTrainerConfig { epsilon: 0.0, ..Default::default() },
            ToyTrainerConfig { steps: 0, ..Default::default() },
            ToyTrainerConfig { options: 1, ..Default::default() },
            ToyTrainerConfig { learning_rate: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
