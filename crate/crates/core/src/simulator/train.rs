//! Training loop: sample groups, calibrate, compute advantages, update,
//! evaluate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{compute_advantages, AdvantageConfig, AdvantageMode};
use crate::calibration::{calibrate_group, CalibrationConfig};
use crate::error::{LensError, Result};
use crate::policy::{Policy, PolicyModel};
use crate::rng::stream_rng;
use crate::types::GroupKind;

use super::pass_at_k::pass_at_k;
use super::sampling::sample_group;
use super::surrogate::{surrogate_update, TrainingGroup, UpdateConfig};
use super::task::SyntheticTask;

const STREAM_BATCH: u64 = 10;
const STREAM_GROUP: u64 = 11;
const STREAM_EVAL: u64 = 12;

pub const PASS_AT_K: [u32; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Lens,
    Grpo,
    MixedOnly,
    NegativeOnly,
}

impl Algorithm {
    pub fn advantage_mode(self) -> AdvantageMode {
        match self {
            Algorithm::Lens => AdvantageMode::Full,
            Algorithm::Grpo => AdvantageMode::GrpoBaseline,
            Algorithm::MixedOnly => AdvantageMode::MixedOnly,
            Algorithm::NegativeOnly => AdvantageMode::NegativeOnly,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Lens => "lens",
            Algorithm::Grpo => "grpo",
            Algorithm::MixedOnly => "mixed_only",
            Algorithm::NegativeOnly => "negative_only",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = LensError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lens" => Ok(Algorithm::Lens),
            "grpo" => Ok(Algorithm::Grpo),
            "mixed_only" => Ok(Algorithm::MixedOnly),
            "negative_only" => Ok(Algorithm::NegativeOnly),
            other => Err(LensError::InvalidConfig(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub group_size: usize,
    pub questions_per_batch: usize,
    pub inner_updates: usize,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub alpha: f64,
    pub temperature: f64,
    pub std_epsilon: f64,
    pub calibration: CalibrationConfig,
    pub seed: u64,
    /// Evaluate every this many steps, and always after the last one.
    pub eval_interval: usize,
    pub eval_samples: usize,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, steps: usize) -> Self {
        TrainConfig {
            group_size: 16,
            questions_per_batch: 32,
            inner_updates: 4,
            clip_epsilon: 0.2,
            learning_rate,
            steps,
            alpha: 0.25,
            temperature: 1.0,
            std_epsilon: 1e-8,
            calibration: CalibrationConfig::default(),
            seed: 0,
            eval_interval: 100,
            eval_samples: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LensError::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if self.questions_per_batch == 0 {
            return bad("questions_per_batch must be positive".into());
        }
        if self.inner_updates == 0 {
            return bad("inner_updates must be at least 1".into());
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!("clip_epsilon must lie in (0, 1), got {}", self.clip_epsilon));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !self.alpha.is_finite() {
            return bad("alpha must be finite".into());
        }
        if self.eval_interval == 0 || self.eval_samples == 0 {
            return bad("eval_interval and eval_samples must be positive".into());
        }
        self.calibration.validate()
    }

    pub fn advantage(&self, algorithm: Algorithm) -> AdvantageConfig {
        AdvantageConfig {
            alpha: self.alpha,
            std_epsilon: self.std_epsilon,
            mode: algorithm.advantage_mode(),
        }
    }

    fn update(&self) -> UpdateConfig {
        UpdateConfig {
            learning_rate: self.learning_rate,
            inner_updates: self.inner_updates,
            clip_epsilon: self.clip_epsilon,
        }
    }
}

/// One record per training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub negative_group_fraction: f64,
    /// Filled on evaluation steps only.
    #[serde(default)]
    pub pass_at_k: BTreeMap<u32, f64>,
    pub grad_norm: f64,
    pub grad_norm_from_negative_groups: f64,
    /// Evaluation accuracy on the hard questions, on evaluation steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_mean_reward: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<TrainMetrics>,
    pub policy: PolicyModel,
}

impl TrainOutcome {
    pub fn final_eval(&self) -> Option<&TrainMetrics> {
        self.metrics.iter().rev().find(|m| !m.pass_at_k.is_empty())
    }
}

/// Evaluation summary from fresh samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub pass_at_k: BTreeMap<u32, f64>,
    pub mean_reward: f64,
    pub hard_mean_reward: Option<f64>,
}

/// Draws `samples` answers per question and scores pass@k for every
/// `k <= samples` in [`PASS_AT_K`].
pub fn evaluate<P: Policy + Sync>(policy: &P, task: &SyntheticTask, samples: usize, seed: u64, step: usize) -> Result<Evaluation> {
    let questions = &task.task.questions;
    let results: Vec<Vec<bool>> = (0..questions.len())
        .into_par_iter()
        .map(|q| {
            let mut rng = stream_rng(seed, &[STREAM_EVAL, step as u64, q as u64]);
            (0..samples)
                .map(|_| questions[q].reward(&policy.sample(q, &mut rng)) == 1.0)
                .collect()
        })
        .collect();
    let mut pass = BTreeMap::new();
    for k in PASS_AT_K.into_iter().filter(|&k| k as usize <= samples) {
        pass.insert(k, pass_at_k(&results, k as usize)?);
    }
    let accuracy = |qs: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let (mut hits, mut total) = (0usize, 0usize);
        for q in qs {
            hits += results[q].iter().filter(|&&b| b).count();
            total += results[q].len();
        }
        (total > 0).then(|| hits as f64 / total as f64)
    };
    let mean_reward = accuracy(&mut (0..questions.len())).unwrap_or(0.0);
    let hard_mean_reward = accuracy(&mut task.hard_indices().into_iter());
    Ok(Evaluation { pass_at_k: pass, mean_reward, hard_mean_reward })
}

/// Trains from the task's fresh policy and returns every step's metrics.
pub fn train(task: &SyntheticTask, cfg: &TrainConfig, algorithm: Algorithm) -> Result<TrainOutcome> {
    train_with(task, cfg, algorithm, |_| Ok(()))
}

/// As [`train`], calling `on_step` with each record as soon as it exists.
pub fn train_with<F>(task: &SyntheticTask, cfg: &TrainConfig, algorithm: Algorithm, mut on_step: F) -> Result<TrainOutcome>
where
    F: FnMut(&TrainMetrics) -> Result<()>,
{
    cfg.validate()?;
    let mut policy = task.initial_policy.clone().with_temperature(cfg.temperature);
    let advantage_cfg = cfg.advantage(algorithm);
    let n = task.num_questions();
    let mut metrics = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let mut batch_rng = stream_rng(cfg.seed, &[STREAM_BATCH, step as u64]);
        let batch: Vec<usize> = (0..cfg.questions_per_batch).map(|_| batch_rng.random_range(0..n)).collect();

        let groups: Result<Vec<TrainingGroup>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &q)| {
                let mut rng = stream_rng(cfg.seed, &[STREAM_GROUP, step as u64, slot as u64]);
                let sampled = sample_group(&policy, &task.task, q, cfg.group_size, &mut rng)?;
                let calibrated = calibrate_group(&sampled.group, &cfg.calibration)?;
                let calibrated = compute_advantages(calibrated, &advantage_cfg);
                Ok(TrainingGroup::new(&sampled, &calibrated))
            })
            .collect();
        let groups = groups?;

        let question = |g: &TrainingGroup| &task.task.questions[g.question];
        let rewards: f64 = groups.iter().flat_map(|g| g.answers.iter().map(move |a| question(g).reward(a))).sum();
        let total = groups.len() * cfg.group_size;
        let negative = groups.iter().filter(|g| g.kind == GroupKind::Negative).count();

        let stats = surrogate_update(&mut policy, &groups, &cfg.update(), step)?;

        let mut record = TrainMetrics {
            step,
            mean_reward: rewards / total as f64,
            negative_group_fraction: negative as f64 / groups.len() as f64,
            pass_at_k: BTreeMap::new(),
            grad_norm: stats.grad_norm,
            grad_norm_from_negative_groups: stats.grad_norm_from_negative_groups,
            hard_mean_reward: None,
        };
        if step % cfg.eval_interval == 0 || step == cfg.steps {
            let eval = evaluate(&policy, task, cfg.eval_samples, cfg.seed, step)?;
            record.pass_at_k = eval.pass_at_k;
            record.hard_mean_reward = eval.hard_mean_reward;
        }
        on_step(&record)?;
        metrics.push(record);
    }
    Ok(TrainOutcome { metrics, policy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::TabularSoftmax;
    use crate::simulator::task::{generate_task, AnswerSpaceSpec, CorrectCount, DifficultyProfile, SyntheticTaskSpec};
    use crate::theory::EnumerableTask;

    fn toy() -> SyntheticTask {
        generate_task(&SyntheticTaskSpec {
            num_questions: 1,
            answers: AnswerSpaceSpec::Tabular { answers: 6 },
            correct: CorrectCount::Fixed(2),
            profile: DifficultyProfile::Uniform,
            seed: 0,
        })
        .unwrap()
    }

    /// Correct answers carry exactly zero probability; wrong answers differ.
    fn unreachable() -> SyntheticTask {
        let task = EnumerableTask::multiple_choice_toy();
        let policy = TabularSoftmax::from_logits(vec![vec![-1e3, -1e3, 0.0, 0.5, 1.0, 1.5]]);
        SyntheticTask { task, hard: vec![true], initial_policy: policy.into() }
    }

    fn small_cfg(steps: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(4.0, steps);
        cfg.group_size = 8;
        cfg.questions_per_batch = 4;
        cfg.eval_interval = 5;
        cfg
    }

    #[test]
    fn toy_task_learns_with_both_algorithms() {
        for alg in [Algorithm::Lens, Algorithm::Grpo] {
            let mut cfg = TrainConfig::new(4.0, 500);
            cfg.seed = 3;
            let out = train(&toy(), &cfg, alg).unwrap();
            let first = out.metrics.iter().position(|m| m.mean_reward >= 0.95);
            assert!(first.is_some_and(|s| s < 500), "{alg}");
            assert!(out.final_eval().unwrap().pass_at_k[&1] >= 0.95);
        }
    }

    #[test]
    fn grpo_gets_no_signal_without_correct_samples() {
        let out = train(&unreachable(), &small_cfg(20), Algorithm::Grpo).unwrap();
        for m in &out.metrics {
            assert_eq!(m.grad_norm, 0.0);
            assert_eq!(m.grad_norm_from_negative_groups, 0.0);
            assert_eq!(m.negative_group_fraction, 1.0);
            assert!(m.pass_at_k.values().all(|&v| v == 0.0));
        }
        assert_eq!(out.policy.params(), unreachable().initial_policy.params());
    }

    #[test]
    fn lens_learns_from_negative_groups() {
        let out = train(&unreachable(), &small_cfg(20), Algorithm::Lens).unwrap();
        assert!(out.metrics[0].grad_norm_from_negative_groups > 0.0);
        // every step of the all-negative streak keeps a gradient
        for m in &out.metrics {
            assert_eq!(m.negative_group_fraction, 1.0);
            assert!(m.grad_norm > 0.0);
            assert_eq!(m.grad_norm, m.grad_norm_from_negative_groups);
        }
        // the most likely wrong answer loses mass
        let before = unreachable().initial_policy.answer_probs(0);
        let after = out.policy.answer_probs(0);
        assert!(after[5] < before[5]);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let task = generate_task(&SyntheticTaskSpec {
            num_questions: 10,
            answers: AnswerSpaceSpec::Tabular { answers: 8 },
            correct: CorrectCount::Range { min: 1, max: 2 },
            profile: DifficultyProfile::HardTail { fraction: 0.5 },
            seed: 5,
        })
        .unwrap();
        let cfg = small_cfg(15);
        let a = train(&task, &cfg, Algorithm::Lens).unwrap();
        let b = train(&task, &cfg, Algorithm::Lens).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.policy, b.policy);
        let c = train(&task, &TrainConfig { seed: 1, ..cfg }, Algorithm::Lens).unwrap();
        assert_ne!(a.metrics, c.metrics);
    }

    #[test]
    fn zero_alpha_matches_mixed_only() {
        let task = generate_task(&SyntheticTaskSpec {
            num_questions: 6,
            answers: AnswerSpaceSpec::Tabular { answers: 10 },
            correct: CorrectCount::Fixed(1),
            profile: DifficultyProfile::HardTail { fraction: 0.5 },
            seed: 8,
        })
        .unwrap();
        let cfg = TrainConfig { alpha: 0.0, ..small_cfg(15) };
        let lens = train(&task, &cfg, Algorithm::Lens).unwrap();
        let mixed = train(&task, &cfg, Algorithm::MixedOnly).unwrap();
        assert_eq!(lens.metrics, mixed.metrics);
        assert!(lens.metrics.iter().all(|m| m.grad_norm_from_negative_groups == 0.0));
    }

    #[test]
    fn policy_stays_on_the_simplex() {
        let task = generate_task(&SyntheticTaskSpec {
            num_questions: 4,
            answers: AnswerSpaceSpec::Sequence { vocab: 3, max_len: 3 },
            correct: CorrectCount::Fixed(2),
            profile: DifficultyProfile::HardTail { fraction: 0.5 },
            seed: 2,
        })
        .unwrap();
        let cfg = TrainConfig { learning_rate: 1.0, ..small_cfg(10) };
        let mut policy = task.initial_policy.clone();
        for alg in [Algorithm::Lens, Algorithm::NegativeOnly] {
            let out = train_with(&task, &cfg, alg, |m| {
                assert!(m.pass_at_k.keys().zip(m.pass_at_k.keys().skip(1)).all(|(a, b)| a < b));
                let v: Vec<f64> = m.pass_at_k.values().copied().collect();
                assert!(v.windows(2).all(|w| w[0] <= w[1]));
                assert!((0.0..=1.0).contains(&m.negative_group_fraction));
                Ok(())
            })
            .unwrap();
            policy = out.policy;
            for q in 0..4 {
                let total: f64 = policy.answer_probs(q).iter().sum();
                assert!((total - 1.0).abs() < 1e-9, "{total}");
            }
        }
        assert!(policy.params().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(0.1, 1).validate().is_ok());
        for bad in [
            TrainConfig { clip_epsilon: 1.0, ..TrainConfig::new(0.1, 1) },
            TrainConfig { inner_updates: 0, ..TrainConfig::new(0.1, 1) },
            TrainConfig { group_size: 1, ..TrainConfig::new(0.1, 1) },
            TrainConfig::new(-1.0, 1),
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [Algorithm::Lens, Algorithm::Grpo, Algorithm::MixedOnly, Algorithm::NegativeOnly] {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("LENS".parse::<Algorithm>().unwrap(), Algorithm::Lens);
        assert!("ppo".parse::<Algorithm>().is_err());
    }
}
