//! Group advantages: z-scores for groups with a correct sample, de-meaned and
//! alpha-weighted calibrated rewards for negative groups, plus the ablation
//! modes.

use serde::{Deserialize, Serialize};

use crate::types::{CalibratedGroup, GroupKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// Calibrated rewards everywhere; negative groups de-meaned and scaled by alpha.
    #[default]
    Full,
    /// Calibrated mixed groups; negative groups contribute nothing.
    MixedOnly,
    /// Raw-reward mixed groups; calibrated, alpha-scaled negative groups.
    NegativeOnly,
    /// Plain group z-scores of the raw rewards.
    GrpoBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvantageConfig {
    pub alpha: f64,
    pub std_epsilon: f64,
    pub mode: AdvantageMode,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        AdvantageConfig {
            alpha: 0.25,
            std_epsilon: 1e-8,
            mode: AdvantageMode::Full,
        }
    }
}

impl AdvantageConfig {
    /// Warns when alpha lies outside `[0, 1]`. Negative alpha is still
    /// accepted so callers can probe sign flips deliberately.
    pub fn alpha_warning(&self) -> Option<String> {
        if (0.0..=1.0).contains(&self.alpha) {
            None
        } else {
            Some(format!("alpha = {} lies outside [0, 1]", self.alpha))
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `(r - mean) / (std + std_epsilon)` with population std; all zeros when the
/// std falls below `std_epsilon`.
pub fn normalize_mixed(rewards: &[f64], std_epsilon: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let m = mean(rewards);
    let var = rewards.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / rewards.len() as f64;
    let std = var.sqrt();
    if std < std_epsilon || std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - m) / (std + std_epsilon)).collect()
}

/// `r - mean(r)` without variance scaling.
pub fn normalize_negative(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let m = mean(rewards);
    rewards.iter().map(|r| r - m).collect()
}

fn scaled(values: Vec<f64>, alpha: f64) -> Vec<f64> {
    // `+ 0.0` folds -0.0 into 0.0 so alpha = 0 matches a zeroed group bit for bit
    values.into_iter().map(|v| alpha * v + 0.0).collect()
}

/// Fills `cal.advantages` according to the configured mode.
pub fn compute_advantages(mut cal: CalibratedGroup, cfg: &AdvantageConfig) -> CalibratedGroup {
    let raw: Vec<f64> = cal.group.rewards().collect();
    let g = raw.len();
    let negative = cal.kind == GroupKind::Negative;
    cal.advantages = match (cfg.mode, negative) {
        (AdvantageMode::Full, false) | (AdvantageMode::MixedOnly, false) => {
            normalize_mixed(&cal.calibrated_rewards, cfg.std_epsilon)
        }
        (AdvantageMode::Full, true) | (AdvantageMode::NegativeOnly, true) => {
            scaled(normalize_negative(&cal.calibrated_rewards), cfg.alpha)
        }
        (AdvantageMode::NegativeOnly, false) | (AdvantageMode::GrpoBaseline, false) => {
            normalize_mixed(&raw, cfg.std_epsilon)
        }
        (AdvantageMode::MixedOnly, true) | (AdvantageMode::GrpoBaseline, true) => vec![0.0; g],
    };
    cal
}
