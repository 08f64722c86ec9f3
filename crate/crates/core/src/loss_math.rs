//! Scalar reference implementations of the training objectives consumed by
//! external trainers: SFT negative log-likelihood, DPO, DPO with an added SFT
//! term, pairwise reward-model loss, and the PPO actor/critic objectives.
//!
//! Every function is the single-sample form; batch expectations reduce with
//! [`mean_loss`]. No gradients or training loops live here — these exist to
//! validate training code numerically.
//!
//! Sign conventions: the PPO actor objective is the negated `max` of the
//! unclipped and clipped surrogate terms, and the critic loss is the `max`
//! of the squared errors of the raw and clipped value estimates, halved.

use serde::{Deserialize, Serialize};

/// Default weight of the SFT term in [`dpo_sft_loss`].
pub const DEFAULT_DPO_SFT_ALPHA: f64 = 0.01;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("sequence log-probs must be non-empty")]
    EmptySequence,
    #[error("log-probability {0} is positive")]
    PositiveLogProb(f64),
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("alpha must be non-negative, got {0}")]
    NegativeAlpha(f64),
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("probability ratio must be positive, got {0}")]
    InvalidRatio(f64),
    #[error("input {0} is not finite")]
    NonFinite(f64),
}

/// Per-token log-probabilities of a response under a model.
///
/// Non-empty, every entry `<= 0`; both are enforced at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SequenceLogProbs(Vec<f64>);

impl SequenceLogProbs {
    pub fn new(logprobs: Vec<f64>) -> Result<Self, LossError> {
        if logprobs.is_empty() {
            return Err(LossError::EmptySequence);
        }
        for &lp in &logprobs {
            if !lp.is_finite() {
                return Err(LossError::NonFinite(lp));
            }
            if lp > 0.0 {
                return Err(LossError::PositiveLogProb(lp));
            }
        }
        Ok(Self(logprobs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    /// Total sequence log-probability (sum over tokens).
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for SequenceLogProbs {
    type Error = LossError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SequenceLogProbs> for Vec<f64> {
    fn from(s: SequenceLogProbs) -> Self {
        s.0
    }
}

/// Summed sequence log-probs of the chosen/rejected responses under the
/// policy and reference models, plus the preference temperature `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoInputs {
    pub policy_chosen_logprob: f64,
    pub policy_rejected_logprob: f64,
    pub ref_chosen_logprob: f64,
    pub ref_rejected_logprob: f64,
    pub beta: f64,
}

impl DpoInputs {
    pub fn new(
        policy_chosen_logprob: f64,
        policy_rejected_logprob: f64,
        ref_chosen_logprob: f64,
        ref_rejected_logprob: f64,
        beta: f64,
    ) -> Result<Self, LossError> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(LossError::InvalidBeta(beta));
        }
        Ok(Self {
            policy_chosen_logprob,
            policy_rejected_logprob,
            ref_chosen_logprob,
            ref_rejected_logprob,
            beta,
        })
    }

    /// Scaled chosen-vs-rejected margin
    /// `beta * ((pi_c - ref_c) - (pi_r - ref_r))`.
    pub fn margin(&self) -> f64 {
        self.beta
            * ((self.policy_chosen_logprob - self.ref_chosen_logprob)
                - (self.policy_rejected_logprob - self.ref_rejected_logprob))
    }
}

/// Numerically stable `log(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean token negative log-likelihood: `-(1/N) * sum(logprobs)`.
pub fn sft_loss(seq: &SequenceLogProbs) -> f64 {
    -seq.sum() / seq.len() as f64
}

/// `-log sigmoid(margin)` with the margin from [`DpoInputs::margin`].
///
/// Strictly decreasing in the margin and equal to `ln 2` at zero margin.
pub fn dpo_loss(inputs: &DpoInputs) -> f64 {
    softplus(-inputs.margin())
}

/// DPO loss plus `alpha` times the SFT loss of the chosen response.
pub fn dpo_sft_loss(
    inputs: &DpoInputs,
    chosen_seq: &SequenceLogProbs,
    alpha: f64,
) -> Result<f64, LossError> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(LossError::NegativeAlpha(alpha));
    }
    Ok(dpo_loss(inputs) + alpha * sft_loss(chosen_seq))
}

/// Pairwise reward-model loss `-log sigmoid(r_chosen - r_rejected)`.
pub fn rm_pairwise_loss(reward_chosen: f64, reward_rejected: f64) -> f64 {
    softplus(-(reward_chosen - reward_rejected))
}

/// Single-step PPO actor objective:
/// `-max(ratio * advantage, clip(ratio, 1-eps, 1+eps) * advantage)`.
pub fn ppo_actor_objective(ratio: f64, advantage: f64, epsilon: f64) -> Result<f64, LossError> {
    validate_epsilon(epsilon)?;
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(LossError::InvalidRatio(ratio));
    }
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    Ok(-unclipped.max(clipped))
}

/// Single-step PPO critic loss:
/// `0.5 * max((v - ret)^2, (clip(v, v_old-eps, v_old+eps) - ret)^2)`.
pub fn ppo_critic_loss(
    value: f64,
    old_value: f64,
    return_est: f64,
    epsilon: f64,
) -> Result<f64, LossError> {
    validate_epsilon(epsilon)?;
    let raw = (value - return_est).powi(2);
    let clipped_value = value.clamp(old_value - epsilon, old_value + epsilon);
    let clipped = (clipped_value - return_est).powi(2);
    Ok(0.5 * raw.max(clipped))
}

/// Mean reduction over per-sample losses.
pub fn mean_loss(values: &[f64]) -> Result<f64, LossError> {
    if values.is_empty() {
        return Err(LossError::EmptySequence);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn validate_epsilon(epsilon: f64) -> Result<(), LossError> {
    if !epsilon.is_finite() || epsilon <= 0.0 || epsilon >= 1.0 {
        return Err(LossError::InvalidEpsilon(epsilon));
    }
    Ok(())
}

/// One `loss-check` input row: the objective to evaluate plus its inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossCheckRequest {
    Sft {
        logprobs: Vec<f64>,
    },
    Dpo {
        policy_chosen: f64,
        policy_rejected: f64,
        ref_chosen: f64,
        ref_rejected: f64,
        beta: f64,
    },
    DpoSft {
        policy_chosen: f64,
        policy_rejected: f64,
        ref_chosen: f64,
        ref_rejected: f64,
        beta: f64,
        alpha: f64,
        chosen_logprobs: Vec<f64>,
    },
    Rm {
        reward_chosen: f64,
        reward_rejected: f64,
    },
    PpoActor {
        ratio: f64,
        advantage: f64,
        epsilon: f64,
    },
    PpoCritic {
        value: f64,
        old_value: f64,
        return_estimate: f64,
        epsilon: f64,
    },
}

/// Evaluate one loss-check request.
pub fn evaluate_loss_check(request: &LossCheckRequest) -> Result<f64, LossError> {
    match request {
        LossCheckRequest::Sft { logprobs } => {
            Ok(sft_loss(&SequenceLogProbs::new(logprobs.clone())?))
        }
        LossCheckRequest::Dpo {
            policy_chosen,
            policy_rejected,
            ref_chosen,
            ref_rejected,
            beta,
        } => Ok(dpo_loss(&DpoInputs::new(
            *policy_chosen,
            *policy_rejected,
            *ref_chosen,
            *ref_rejected,
            *beta,
        )?)),
        LossCheckRequest::DpoSft {
            policy_chosen,
            policy_rejected,
            ref_chosen,
            ref_rejected,
            beta,
            alpha,
            chosen_logprobs,
        } => {
            let inputs = DpoInputs::new(
                *policy_chosen,
                *policy_rejected,
                *ref_chosen,
                *ref_rejected,
                *beta,
            )?;
            let seq = SequenceLogProbs::new(chosen_logprobs.clone())?;
            dpo_sft_loss(&inputs, &seq, *alpha)
        }
        LossCheckRequest::Rm {
            reward_chosen,
            reward_rejected,
        } => Ok(rm_pairwise_loss(*reward_chosen, *reward_rejected)),
        LossCheckRequest::PpoActor {
            ratio,
            advantage,
            epsilon,
        } => ppo_actor_objective(*ratio, *advantage, *epsilon),
        LossCheckRequest::PpoCritic {
            value,
            old_value,
            return_estimate,
            epsilon,
        } => ppo_critic_loss(*value, *old_value, *return_estimate, *epsilon),
    }
}
