//! Confidence-calibrated rewards for group-relative policy optimization.
//!
//! Incorrect responses receive a negative reward proportional to the policy's
//! confidence odds `pi / (D - pi)`, so groups in which every response failed
//! still produce a gradient. The crate also contains the likelihood checks
//! behind the reward and a small tabular RL simulator.

pub mod advantage;
pub mod calibration;
pub mod error;
pub mod policy;
pub mod rng;
pub mod simulator;
pub mod theory;
pub mod types;

pub use advantage::{compute_advantages, normalize_mixed, normalize_negative, AdvantageConfig, AdvantageMode};
pub use calibration::{
    calibrate_group, calibrated_reward, difficulty, difficulty_importance, normalized_prob, CalibrationConfig,
    NegativeScale,
};
pub use error::{LensError, Result};
pub use policy::{LinearAutoregressive, Policy, PolicyModel, TabularSoftmax};
pub use types::{
    make_group, Answer, CalibratedGroup, GroupKind, GroupSample, PreferenceSpec, Question, ResponseGroup,
};
