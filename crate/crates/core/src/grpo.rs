//! Clipped group-relative policy objective and the inner update loop.
//!
//! The loss over a group of `N` completions is
//!
//! ```text
//! L(θ) = −(1 / Σ|o_i|) Σ_i Σ_t min(ρ_it · A_i, clip(ρ_it, 1 − ε_low, 1 + ε_high) · A_i)
//! ρ_it = exp(log π_θ(o_it | task, o_i,<t) − log π_old(o_it | task, o_i,<t))
//! A_i  = r_i − mean(r)
//! ```
//!
//! There is no KL penalty and the advantage is not divided by the reward
//! standard deviation. New log-probabilities are always taken under the task
//! context, whichever sampler produced the completion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{ContextId, PolicyError, PolicyParams, Prev};
use crate::sampler::Completion;

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("group needs at least 2 rewards, got {0}")]
    DegenerateGroup(usize),
    #[error("completion {0} is unscored")]
    Unscored(usize),
    #[error("non-finite reward at index {0}")]
    NonFiniteReward(usize),
    #[error("non-finite policy ratio at completion {completion}, token {token} (new {new_logprob}, old {old_logprob})")]
    NonFiniteRatio {
        completion: usize,
        token: usize,
        new_logprob: f64,
        old_logprob: f64,
    },
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("group shape mismatch: {0}")]
    Shape(String),
    #[error("invalid clip configuration: low {low}, high {high}")]
    BadClip { low: f64, high: f64 },
    #[error("inner iterations must be at least 1")]
    ZeroIterations,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
        }
    }
}

impl ClipConfig {
    pub fn new(eps_low: f64, eps_high: f64) -> Result<Self, GrpoError> {
        let c = Self { eps_low, eps_high };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.eps_low > 0.0 && self.eps_low < 1.0 && self.eps_high > 0.0 && self.eps_high.is_finite() {
            Ok(())
        } else {
            Err(GrpoError::BadClip {
                low: self.eps_low,
                high: self.eps_high,
            })
        }
    }
}

/// Mean-centered rewards, without scaling by the standard deviation.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::DegenerateGroup(rewards.len()));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(GrpoError::NonFiniteReward(i));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// One scored group with frozen reference log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    completions: Vec<Completion>,
    rewards: Vec<f64>,
    advantages: Vec<f64>,
    old_logprobs: Vec<Vec<f64>>,
    iteration: usize,
}

impl Group {
    /// Freezes the reference log-probabilities under `params` at the task
    /// context. Every completion must already carry a score.
    pub fn new(completions: Vec<Completion>, params: &PolicyParams, iteration: usize) -> Result<Self, GrpoError> {
        let rewards = completions
            .iter()
            .enumerate()
            .map(|(i, c)| c.score().ok_or(GrpoError::Unscored(i)))
            .collect::<Result<Vec<_>, _>>()?;
        let advantages = compute_advantages(&rewards)?;
        let old_logprobs = completions
            .iter()
            .map(|c| params.logprobs(ContextId::task(), &c.tokens))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            completions,
            rewards,
            advantages,
            old_logprobs,
            iteration,
        })
    }

    /// Builds a group from raw parts; used to pin reference log-probabilities
    /// that differ from the current policy.
    pub fn from_parts(
        completions: Vec<Completion>,
        rewards: Vec<f64>,
        old_logprobs: Vec<Vec<f64>>,
        iteration: usize,
    ) -> Result<Self, GrpoError> {
        if completions.len() != rewards.len() || completions.len() != old_logprobs.len() {
            return Err(GrpoError::Shape("completions, rewards and logprobs differ in length".into()));
        }
        for (i, (c, lp)) in completions.iter().zip(&old_logprobs).enumerate() {
            if c.tokens.len() != lp.len() {
                return Err(GrpoError::Shape(format!(
                    "completion {i}: {} tokens but {} logprobs",
                    c.tokens.len(),
                    lp.len()
                )));
            }
        }
        let advantages = compute_advantages(&rewards)?;
        Ok(Self {
            completions,
            rewards,
            advantages,
            old_logprobs,
            iteration,
        })
    }

    pub fn len(&self) -> usize {
        self.completions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completions.is_empty()
    }

    pub fn completions(&self) -> &[Completion] {
        &self.completions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    pub fn old_logprobs(&self) -> &[Vec<f64>] {
        &self.old_logprobs
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn total_tokens(&self) -> usize {
        self.completions.iter().map(|c| c.tokens.len()).sum()
    }

    /// True when every advantage is exactly zero.
    pub fn is_degenerate(&self) -> bool {
        self.advantages.iter().all(|&a| a == 0.0)
    }
}

/// Diagnostics of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    pub mean_ratio: f64,
    /// Fraction of tokens with ratio below `1 − ε_low`.
    pub clip_low_frac: f64,
    /// Fraction of tokens with ratio above `1 + ε_high`.
    pub clip_high_frac: f64,
    pub tokens: usize,
}

/// Loss value and its exact gradient with respect to the policy weights.
pub fn grpo_loss_and_grad(params: &PolicyParams, group: &Group, clip: ClipConfig) -> Result<(LossReport, Vec<f64>), GrpoError> {
    clip.validate()?;
    let total_tokens = group.total_tokens();
    if total_tokens == 0 {
        return Err(GrpoError::Shape("group has no tokens".into()));
    }
    let norm = 1.0 / total_tokens as f64;
    let (lo, hi) = (1.0 - clip.eps_low, 1.0 + clip.eps_high);
    let mut grad = vec![0.0; params.weights().len()];
    let mut objective = 0.0;
    let mut ratio_sum = 0.0;
    let (mut n_low, mut n_high) = (0usize, 0usize);

    for (i, c) in group.completions.iter().enumerate() {
        let adv = group.advantages[i];
        let old = &group.old_logprobs[i];
        if c.tokens.len() != old.len() {
            return Err(GrpoError::Shape(format!("completion {i} logprob length mismatch")));
        }
        params.validate_sequence(&c.tokens)?;
        let mut prev = Prev::Start;
        for (t, &tok) in c.tokens.iter().enumerate() {
            let new_lp = params.logprob_step(ContextId::task(), prev, t, tok)?;
            let ratio = (new_lp - old[t]).exp();
            if !ratio.is_finite() {
                return Err(GrpoError::NonFiniteRatio {
                    completion: i,
                    token: t,
                    new_logprob: new_lp,
                    old_logprob: old[t],
                });
            }
            ratio_sum += ratio;
            if ratio < lo {
                n_low += 1;
            } else if ratio > hi {
                n_high += 1;
            }
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(lo, hi) * adv;
            // gradient flows only through the unclipped branch of the min
            if unclipped <= clipped {
                objective += unclipped;
                // d(ρA)/dW = ρ·A·∂logπ/∂W, scaled by −1/Σ|o|
                let coef = -norm * unclipped;
                params.accumulate_logprob_grad(ContextId::task(), prev, t, tok, coef, &mut grad)?;
            } else {
                objective += clipped;
            }
            prev = Prev::Token(tok);
        }
    }

    let loss = -norm * objective;
    if !loss.is_finite() {
        return Err(GrpoError::NonFiniteLoss(loss));
    }
    let report = LossReport {
        loss,
        mean_ratio: ratio_sum * norm,
        clip_low_frac: n_low as f64 * norm,
        clip_high_frac: n_high as f64 * norm,
        tokens: total_tokens,
    };
    Ok((report, grad))
}

/// Gradient-based optimizer for policy updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(AdamState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(skip)]
    step: u64,
    #[serde(skip)]
    m: Vec<f64>,
    #[serde(skip)]
    v: Vec<f64>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam(AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// Turns a gradient into the step subtracted from the weights.
    fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        match self {
            Optimizer::Sgd { lr } => grad.iter().map(|g| *lr * g).collect(),
            Optimizer::Adam(s) => {
                if s.m.len() != grad.len() {
                    s.m = vec![0.0; grad.len()];
                    s.v = vec![0.0; grad.len()];
                    s.step = 0;
                }
                s.step += 1;
                let bc1 = 1.0 - s.beta1.powi(s.step as i32);
                let bc2 = 1.0 - s.beta2.powi(s.step as i32);
                grad.iter()
                    .enumerate()
                    .map(|(i, &g)| {
                        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
                        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
                        let mh = s.m[i] / bc1;
                        let vh = s.v[i] / bc2;
                        s.lr * mh / (vh.sqrt() + s.eps)
                    })
                    .collect()
            }
        }
    }
}

/// Runs `mu` gradient steps on `group` with its reference log-probabilities
/// held fixed. Returns the new parameters and one report per inner step.
/// A group whose advantages are all zero leaves the parameters untouched.
pub fn update_policy(
    params: &PolicyParams,
    group: &Group,
    clip: ClipConfig,
    optimizer: &mut Optimizer,
    mu: usize,
) -> Result<(PolicyParams, Vec<LossReport>), GrpoError> {
    if mu == 0 {
        return Err(GrpoError::ZeroIterations);
    }
    if group.is_degenerate() {
        let (report, _) = grpo_loss_and_grad(params, group, clip)?;
        return Ok((params.clone(), vec![report; mu]));
    }
    let mut current = params.clone();
    let mut reports = Vec::with_capacity(mu);
    for _ in 0..mu {
        let (report, grad) = grpo_loss_and_grad(&current, group, clip)?;
        let step = optimizer.step(&grad);
        current = current.apply_step(&step)?;
        reports.push(report);
    }
    Ok((current, reports))
}
