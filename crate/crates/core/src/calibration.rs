//! Confidence-calibrated rewards for incorrect responses.
//!
//! Each response is summarized by its length-normalized (geometric-mean)
//! probability `p = exp(seq_logprob / length)`. The per-group difficulty `D`
//! is an importance-sampling estimate `(mean_i r_i / p_i)^-1`, floored at
//! `floor_factor * max_j p_j`; negative groups, where the estimate is
//! undefined, use the floor alone. An incorrect response then receives
//! `-s * p / (D - p)` with `s = 1/G` by default, and a correct response keeps
//! reward 1.

use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};
use crate::types::{CalibratedGroup, GroupKind, GroupSample, PreferenceSpec, ResponseGroup};

/// Scale applied to every negative calibrated reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeScale {
    /// Divide by the group size; keeps mixed-group advantages sign-consistent.
    #[default]
    OneOverG,
    None,
}

impl NegativeScale {
    pub fn factor(self, group_size: usize) -> f64 {
        match self {
            NegativeScale::OneOverG => 1.0 / group_size as f64,
            NegativeScale::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub difficulty_floor_factor: f64,
    pub negative_scale: NegativeScale,
    pub preference: PreferenceSpec,
    pub prob_epsilon: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            difficulty_floor_factor: 2.0,
            negative_scale: NegativeScale::OneOverG,
            preference: PreferenceSpec::None,
            prob_epsilon: 1e-12,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.difficulty_floor_factor > 1.0) || !self.difficulty_floor_factor.is_finite() {
            return Err(LensError::InvalidConfig(format!(
                "difficulty_floor_factor must be a finite value > 1, got {}",
                self.difficulty_floor_factor
            )));
        }
        if !(self.prob_epsilon > 0.0 && self.prob_epsilon <= 1e-6) {
            return Err(LensError::InvalidConfig(format!(
                "prob_epsilon must lie in (0, 1e-6], got {}",
                self.prob_epsilon
            )));
        }
        self.preference.validate()
    }
}

/// Geometric-mean probability `exp(seq_logprob / length)` clamped to
/// `[eps, 1 - eps]`.
pub fn normalized_prob(sample: &GroupSample, cfg: &CalibrationConfig) -> f64 {
    let eps = cfg.prob_epsilon;
    let p = (sample.seq_logprob / sample.length as f64).exp();
    p.clamp(eps, 1.0 - eps)
}

/// Importance-sampling difficulty estimate; `None` when no sample is correct.
pub fn difficulty_importance(group: &ResponseGroup, probs: &[f64]) -> Option<f64> {
    debug_assert_eq!(group.size(), probs.len());
    if group.num_correct() == 0 {
        return None;
    }
    let g = group.size() as f64;
    let mean: f64 = group
        .samples()
        .iter()
        .zip(probs)
        .map(|(s, p)| s.reward / p)
        .sum::<f64>()
        / g;
    Some(1.0 / mean)
}

/// Per-group difficulty with the stability floor `floor_factor * max p`.
pub fn difficulty(group: &ResponseGroup, probs: &[f64], cfg: &CalibrationConfig) -> f64 {
    let max_p = probs.iter().copied().fold(0.0, f64::max);
    let floor = cfg.difficulty_floor_factor * max_p;
    match difficulty_importance(group, probs) {
        Some(d_imp) => d_imp.max(floor),
        None => floor,
    }
}

/// The odds-like ratio `p / (D - p)` that weights incorrect responses.
///
/// Shared by reward calibration and the likelihood gradient so both evaluate
/// the same expression.
#[inline]
pub fn confidence_odds(prob: f64, difficulty: f64) -> f64 {
    prob / (difficulty - prob)
}

fn check_ratio_domain(prob: f64, difficulty: f64) -> Result<()> {
    if !(prob > 0.0 && prob < difficulty) {
        return Err(LensError::DomainError(format!(
            "calibration needs 0 < p < D, got p = {prob}, D = {difficulty}"
        )));
    }
    Ok(())
}

/// Calibrated reward for one response under the uniform preference.
pub fn calibrated_reward(
    reward: f64,
    prob: f64,
    difficulty: f64,
    group_size: usize,
    cfg: &CalibrationConfig,
) -> Result<f64> {
    if reward == 1.0 {
        return Ok(1.0);
    }
    check_ratio_domain(prob, difficulty)?;
    let s = cfg.negative_scale.factor(group_size);
    Ok(-s * confidence_odds(prob, difficulty))
}

/// Calibrated reward under a preference over correct answers.
///
/// `scale` is the negative-reward scale (`1/G` by default).
pub fn preference_adjusted_reward(
    reward: f64,
    prob: f64,
    difficulty: f64,
    sample: &GroupSample,
    spec: &PreferenceSpec,
    scale: f64,
) -> Result<f64> {
    if reward == 1.0 {
        return Ok(1.0);
    }
    match *spec {
        PreferenceSpec::None => {
            check_ratio_domain(prob, difficulty)?;
            Ok(-scale * confidence_odds(prob, difficulty))
        }
        PreferenceSpec::LengthGeometric { gamma } => {
            let p = prob.min(gamma * (1.0 - 1e-9));
            Ok(-scale * (1.0 / sample.length as f64) * p / (gamma - p))
        }
        PreferenceSpec::PolicyItself | PreferenceSpec::DataDistribution => {
            if !(difficulty > 1.0) {
                return Err(LensError::DomainError(format!(
                    "policy-as-preference weighting needs D > 1, got {difficulty}"
                )));
            }
            if difficulty.is_infinite() {
                return Ok(0.0);
            }
            Ok(-scale / (difficulty - 1.0))
        }
    }
}

/// Runs normalization, difficulty estimation and calibration over a group.
/// `advantages` is left empty.
pub fn calibrate_group(group: &ResponseGroup, cfg: &CalibrationConfig) -> Result<CalibratedGroup> {
    cfg.validate()?;
    let g = group.size();
    let probs: Vec<f64> = group.samples().iter().map(|s| normalized_prob(s, cfg)).collect();
    let kind = group.kind();

    let d = match cfg.preference {
        // inverse empirical correctness rate; infinite for negative groups
        PreferenceSpec::PolicyItself | PreferenceSpec::DataDistribution => {
            let c = group.num_correct();
            if c == 0 {
                f64::INFINITY
            } else {
                g as f64 / c as f64
            }
        }
        _ => difficulty(group, &probs, cfg),
    };

    let calibrated_rewards = if kind == GroupKind::AllCorrect {
        vec![1.0; g]
    } else {
        let scale = cfg.negative_scale.factor(g);
        group
            .samples()
            .iter()
            .zip(&probs)
            .map(|(s, &p)| match cfg.preference {
                PreferenceSpec::None => calibrated_reward(s.reward, p, d, g, cfg),
                ref spec => preference_adjusted_reward(s.reward, p, d, s, spec, scale),
            })
            .collect::<Result<Vec<_>>>()?
    };

    Ok(CalibratedGroup {
        group: group.clone(),
        normalized_probs: probs,
        difficulty: d,
        calibrated_rewards,
        kind,
        advantages: Vec::new(),
    })
}
